"""Process dispatch for `python -m agribot <sim|broker|controller> ...`."""

import sys

from agribot import cli


def main() -> int:
    if len(sys.argv) < 2 or sys.argv[1] in ("-h", "--help"):
        print("usage: python -m agribot {sim|broker|controller} ...", file=sys.stderr)
        return 2
    prog, rest = sys.argv[1], sys.argv[2:]
    if prog == "sim":
        return cli.sim_main(rest)
    if prog == "broker":
        return cli.broker_main(rest)
    if prog == "controller":
        return cli.controller_main(rest)
    print(f"unknown program {prog!r}; expected sim, broker, or controller", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
