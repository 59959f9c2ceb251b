# SYLVAN test package
