"""Independent scalar-loop evaluator used as a duplicate-implementation oracle."""

import math


def mlp_eval(model, x):
    h = [float(v) for v in x]
    n_layers = len(model.weights)
    for l in range(n_layers):
        W, b = model.weights[l], model.biases[l]
        z = [sum(h[i] * W[i][j] for i in range(len(h))) + b[j] for j in range(len(b))]
        if l < n_layers - 1:
            beta = model.betas[l]
            h = [math.sin(math.pi * beta * v) for v in z]
        else:
            h = z
    return h
