"""
Derivative filters as Taylor operators
======================================

The temporal module applies one fixed 5-tap kernel, [-2, -1, 0, 1, 2],
over and over. Each pass behaves like a scaled time derivative.
"""
import numpy as np

from tdm_rppg.model import DERIVATIVE_KERNEL, dtc_chain
from tdm_rppg.tensor import Tensor

t = np.arange(20.0)

# polynomials: the kernel kills constants and maps t -> 10, t^2 -> 20 t
for name, x in [("constant", np.full(20, 3.0)), ("ramp", t), ("quadratic", t ** 2)]:
    d1, d2 = (c.data[0] for c in dtc_chain(Tensor(x[None]), 2))
    print(f"{name:9s} DTC1 interior {d1[4:8]}  DTC2 interior {d2[4:8]}")

# on a sinusoid the first pass is a scaled cosine: a quarter-period lead
fs, bpm = 30.0, 90.0
n = np.arange(300)
w = 2 * np.pi * bpm / 60 / fs
x = np.sin(w * n)
d1 = dtc_chain(Tensor(x[None]), 1)[0].data[0]
gain = np.sum(DERIVATIVE_KERNEL * np.sin(w * np.arange(-2, 3)))
print(f"\n{bpm:.0f} BPM sinusoid: DTC1 / cos ratio {np.median(d1[5:-5] / np.cos(w * n[5:-5])):.4f}, "
      f"predicted {gain:.4f}")
lead = fs * 60 / bpm / 4
print(f"quarter period at {bpm:.0f} BPM = {lead:.1f} frames")

# the gain grows with frequency, roughly linearly for the first pass and
# quadratically for the second
for bpm in (45, 60, 90, 120, 150):
    w = 2 * np.pi * bpm / 60 / fs
    g = abs(np.sum(DERIVATIVE_KERNEL * np.sin(w * np.arange(-2, 3))))
    print(f"{bpm:4d} BPM  |DTC1 gain| {g:6.3f}  |DTC2 gain| {g * g:6.3f}")
