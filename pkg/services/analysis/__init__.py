# Area distributions, multi-year change reports and bar charts from class maps
