"""Shared test utilities: finite-difference gradients and block makers."""

import numpy as np

GRAD_TOL = 1e-6
_FD_STEP = 1e-6


def numeric_grad(fn, arr, step=_FD_STEP):
    """Central-difference gradient of scalar fn with respect to arr."""
    arr = np.asarray(arr, dtype=np.float64)
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + step
        hi = fn(arr)
        arr[i] = orig - step
        lo = fn(arr)
        arr[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
        it.iternext()
    return grad


def grad_close(analytic, numeric, tol=GRAD_TOL):
    """Relative max-norm agreement; scale floor 1 handles zero gradients."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(1.0, float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) <= tol * scale


def random_blocks(rng, count, n, scale_lo=0.3, scale_hi=4.0):
    """Batch of synthetic scaled-TC blocks with mixed energies."""
    scales = rng.uniform(scale_lo, scale_hi, size=count)
    return np.stack([rng.normal(scale=s, size=(n, n)) for s in scales])


def model_grad_errors(arch, n, hidden, bsz, seed, use_map=False,
                      use_mask=False):
    """Per-tensor gradient agreement of the end-to-end loss for one
    architecture, in double precision. Returns {name: bool}."""
    from rdoqlab.codec import make_quant_params
    from rdoqlab.nn.models import (ClassSet, SensitivityMap, adjustment_loss,
                                   init_arm, init_fcnn, network_backward,
                                   network_logits, one_hot_deltas)

    rng = np.random.default_rng(seed)
    cs = ClassSet()
    init = init_fcnn if arch == "fcnn" else init_arm
    model = init(n, 22, class_set=cs, hidden=hidden, seed=seed,
                 dtype=np.float64)
    x2 = rng.normal(size=(bsz, n, n, 2))
    labels = rng.choice(cs.values, size=(bsz, n, n))
    onehot = one_hot_deltas(labels, cs) if arch == "arm" else None
    smap = None
    if use_map:
        w = rng.random((n, n)) + 0.5
        smap = SensitivityMap(weights=w / w.mean())
    mask = (rng.random((bsz, n * n)) < 0.8).astype(np.float64) \
        if use_mask else None
    params = make_quant_params(22)
    del params

    def run_loss():
        logits, caches = network_logits(model, x2, onehot, train=True)
        loss, dlogits = adjustment_loss(logits, labels, cs, smap, mask)
        return loss, dlogits, caches

    _, dlogits, caches = run_loss()
    grads = network_backward(model, dlogits, caches)

    results = {}
    for name in model.params:
        def loss_of(arr, _name=name):
            saved = model.params[_name]
            model.params[_name] = arr
            out = run_loss()[0]
            model.params[_name] = saved
            return out
        num = numeric_grad(loss_of, model.params[name].copy())
        results[name] = grad_close(grads[name], num)
    return results
