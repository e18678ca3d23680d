"""Per-clip extraction time of each spectrogram kind on rendered corpus items."""
import argparse
import time

import numpy as np

from snorehpss.corpus import build_manifest, render_item
from snorehpss.experiment import clip_spectrograms

ALL_KINDS = ("stft", "mel", "cqt", "harmonic")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--items", type=int, default=10)
    ap.add_argument("--kinds", nargs="+", default=list(ALL_KINDS))
    args = ap.parse_args()
    manifest = build_manifest(max(args.items, 10), 20, seed=0)
    clips = [render_item(it) for it in manifest.items[:args.items]]
    for kind in args.kinds:
        times = []
        for clip in clips:
            t = time.perf_counter()
            clip_spectrograms(clip, (kind,))
            times.append(time.perf_counter() - t)
        print(f"{kind:9s} median {np.median(times) * 1e3:7.1f} ms  max {max(times) * 1e3:7.1f} ms")


if __name__ == "__main__":
    main()
