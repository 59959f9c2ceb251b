# Whole-raster classification, class maps, majority filter, map rendering
