# Dirichlet Fusion Filter
# Temporal smoothing of class probabilities from classifiers of differing accuracy
