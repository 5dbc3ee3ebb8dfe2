"""Minimum channel fidelity for the two reference link geometries.

Runs the full truncation (|l_in| <= 3, p_in <= 6, |l_out|, p_out <= 6) at
J = 10, 15, 20, 30 and prints F_min next to the published reference values.
Takes a few minutes.
"""
import time

from oamao.channel import ChannelParams, assemble, min_channel_fidelity

CASES = {
    "a": ((9.2088, 0.2165, 0.4234), (0.8290, 0.8495, 0.8983, 0.9317)),
    "b": ((9.8596, 0.1167, 0.1693), (0.9374, 0.9432, 0.9614, 0.9738)),
}
J_VALUES = (10, 15, 20, 30)


def main():
    print(f"{'case':>4} {'J':>3} {'F_min':>8} {'ref':>8} {'dev':>8} {'time':>6}")
    for name, (ratios, refs) in CASES.items():
        for J, ref in zip(J_VALUES, refs):
            t0 = time.perf_counter()
            res = min_channel_fidelity(assemble(ChannelParams.from_ratios(*ratios, J=J)))
            print(f"{name:>4} {J:>3} {res.F_min:8.4f} {ref:8.4f} {res.F_min - ref:+8.4f} "
                  f"{time.perf_counter() - t0:5.0f}s")


if __name__ == "__main__":
    main()
