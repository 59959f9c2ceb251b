# Land-cover pipeline services: raster I/O, dataset curation, network, inference, analysis
