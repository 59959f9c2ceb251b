# Four-band raster container, resampling, NDVI and tiling
