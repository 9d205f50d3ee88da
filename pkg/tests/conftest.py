import numpy as np
import pytest

from specseg.cmodel import ModelConfig

# miniature topology used wherever a full model is needed but scale is not
MINI_STEM = ((7, 2, 4), (3, 1, 4), (3, 2, 8), (3, 1, 8), (3, 2, 8), (3, 1, 8), (3, 2, 8))


def mini_config(mode="complex", seed=0, input_bins=256):
    return ModelConfig(input_bins=input_bins, mode=mode, stem_spec=MINI_STEM,
                       stage_channels=(8, 16, 16, 16), seed=seed)


def probe_loss(out, w):
    """Random linear functional of the output: a smooth scalar probe."""
    if np.iscomplexobj(out):
        return float(np.sum(w.real * out.real + w.imag * out.imag))
    return float(np.sum(w.real * out))


def probe_upstream(w, out):
    """Gradient of probe_loss w.r.t. the output in the paired-parts packing."""
    if np.iscomplexobj(out):
        return (w.real + 1j * w.imag).astype(out.dtype)
    return w.real.astype(out.dtype)


def _component_flat(a):
    if np.iscomplexobj(a):
        return a.view(np.float64 if a.dtype == np.complex128 else np.float32)
    return a


def fd_layer_check(layer, x, rng, step=1e-5, n_coords=25, train=True):
    """Central finite differences vs layer.backward on parameters and input.

    Returns the worst relative error, with the FD noise floor (machine eps
    times probe magnitude over step) used as the comparison floor so
    exactly-zero analytic gradients are not penalized for FD jitter.
    """
    out = layer.forward(x, train=train)
    w = rng.normal(size=out.shape) + 1j * rng.normal(size=out.shape)
    layer.backward(probe_upstream(w, out))
    grads = {name: _component_flat(np.asarray(layer.grads[name], dtype=None)).copy()
             for name, _ in layer.param_items()}
    gin = _component_flat(layer.backward(probe_upstream(w, out))).copy()

    floor = np.finfo(np.float64).eps * max(1.0, abs(probe_loss(out, w))) / step * 10.0
    worst = 0.0

    def compare(fd, an):
        nonlocal worst
        if abs(fd - an) <= floor:  # below the FD noise floor: indistinguishable
            return
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))

    for name, p in layer.param_items():
        flat = _component_flat(p)
        for i in rng.choice(flat.size, size=min(n_coords, flat.size), replace=False):
            orig = flat.flat[i]
            flat.flat[i] = orig + step
            lp = probe_loss(layer.forward(x, train=train), w)
            flat.flat[i] = orig - step
            lm = probe_loss(layer.forward(x, train=train), w)
            flat.flat[i] = orig
            compare((lp - lm) / (2 * step), grads[name].flat[i])
    xf = _component_flat(x)
    for i in rng.choice(xf.size, size=min(n_coords, xf.size), replace=False):
        orig = xf.flat[i]
        xf.flat[i] = orig + step
        lp = probe_loss(layer.forward(x, train=train), w)
        xf.flat[i] = orig - step
        lm = probe_loss(layer.forward(x, train=train), w)
        xf.flat[i] = orig
        compare((lp - lm) / (2 * step), gin.flat[i])
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
