"""Model-size table for the wide `paper` preset (no training involved)."""

from hwgen.cli import main

if __name__ == "__main__":
    raise SystemExit(main(["report-size", "--preset", "paper"]))
