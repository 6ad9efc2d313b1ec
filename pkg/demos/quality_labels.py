"""Degrade synthetic clips and look at the pseudo-MOS each distortion gets.

Uses the in-process distortions only (mu-law and low-pass) so no external
codec binary is needed. The log-spectral distance uses an absolute power
floor, so it is dominated by bins where one of the two signals is near
silence. On these band-limited clips mu-law noise fills the empty bands and
saturates the pseudo-MOS at 1, while a low-pass above the "low" band is
almost free.

    python demos/quality_labels.py
"""

import numpy as np

from semiq import augment
from semiq.intrusive import default_registry, distance_to_pseudo_mos
from semiq.labelcodec import render
from semiq.synthetic import two_class_corpus


def main():
    entries, buffers = two_class_corpus(4, seconds=1.0, sample_rate=16000, seed=0)
    lsd = default_registry().get_metric("lsd")
    print(f"{'clip':<22} {'distortion':<22} {'LSD dB':>7} {'MOS':>5}  caption")
    for i, e in enumerate(entries):
        clean = buffers[e.path]
        for name in ("mu_law", "lowpass"):
            spec = augment.sample_spec(name, seed=i)
            degraded = augment.apply(spec, clean)
            d = lsd(clean, degraded)
            mos = distance_to_pseudo_mos(d)
            pair = render("mos", e.class_name, mos, "text")
            print(f"{e.path:<22} {name + ' ' + format(next(iter(spec.params.values())), 'g'):<22} {d:7.2f} {mos:5.2f}  {pair.label}")

    print("\nmu-law error against level count")
    x = buffers[entries[0].path]
    for levels in (8, 16, 24, 32, 64, 256):
        err = np.sqrt(np.mean((augment.mu_law_distort(x, levels).samples - x.samples) ** 2))
        print(f"  {levels:4d} levels  rms error {err:.5f}")


if __name__ == "__main__":
    main()
