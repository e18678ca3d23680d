"""Sine-to-click separation of the harmonic mask, swept over the mask exponent."""
import argparse

from snorehpss.hpss import HpssConfig
from snorehpss.probes import separation_gain_db, retained_fraction, steady_sine, single_click


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--powers", type=float, nargs="+", default=[1.0, 2.0, 4.0])
    ap.add_argument("--l-p", type=int, nargs="+", default=[3, 5, 7])
    args = ap.parse_args()
    sine, click = steady_sine(), single_click()
    print("p     l_p  gain_db  sine_kept  click_kept")
    for p in args.powers:
        for l_p in args.l_p:
            cfg = HpssConfig(p=p, l_p_fixed=l_p)
            gain, _ = separation_gain_db(hpss_cfg=cfg)
            print(f"{p:<5g} {l_p:<4d} {gain:7.2f}  {retained_fraction(sine, hpss_cfg=cfg):9.4f}"
                  f"  {retained_fraction(click, hpss_cfg=cfg):10.4f}")


if __name__ == "__main__":
    main()
