"""Where the population of |3,0> goes as more Zernike modes are corrected.

Prints the retention probability and the azimuthal (|3+dl,0>) and radial
(|3,dp>) neighbour probabilities for both reference geometries.
"""
import logging

from oamao.channel import ChannelParams, assemble, transition_probability

CASES = {"a": (9.2088, 0.2165, 0.4234), "b": (9.8596, 0.1167, 0.1693)}
J_VALUES = (10, 15, 20, 30)
OUTS = [(3 + d, 0) for d in (-3, -2, -1, 0, 1, 2, 3)] + [(3, d) for d in (1, 2, 3)]


def main():
    logging.basicConfig(level=logging.ERROR)
    header = " ".join(f"{str(o):>10}" for o in OUTS)
    for name, ratios in CASES.items():
        print(f"case {name}, input |3,0>\n  J {header}")
        for J in J_VALUES:
            A = assemble(ChannelParams.from_ratios(*ratios, J=J))
            print(f"{J:>3} " + " ".join(f"{transition_probability(A, (3, 0), o):10.3e}" for o in OUTS))
        print()


if __name__ == "__main__":
    main()
