# Labeled tile curation, splits, augmentation, manifests and synthetic data
