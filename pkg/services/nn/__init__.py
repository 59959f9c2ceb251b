# Minimal deterministic CNN core on numpy: layers, residual classifier, loss, SGD, checkpoints
