"""End-to-end run on the canonical four-target scene.

Validates the scene, solves for the parameter vector, verifies by forward ray
tracing, and exports the surface mesh. Everything lands in --outdir.
"""

import argparse
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from refractor.cli import main as cli_main  # noqa: E402

REPO = pathlib.Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scene", default=str(REPO / "scenes" / "canonical.json"))
    ap.add_argument("--grid", default="256x256")
    ap.add_argument("--outdir", default=str(REPO / "out"))
    args = ap.parse_args()

    outdir = pathlib.Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    result = outdir / "result.json"

    steps = [
        ("validate", ["validate", args.scene, "--grid", args.grid,
                      "--json", str(outdir / "validation.json")]),
        ("solve", ["solve", args.scene, "--grid", args.grid,
                   "--out", str(result), "--log", str(outdir / "trace.csv"),
                   "--labels", str(outdir / "labels.csv")]),
        ("trace", ["trace", args.scene, "--from-result", str(result),
                   "--grid", args.grid, "--out", str(outdir / "transport.json"),
                   "--rays", str(outdir / "rays.csv")]),
        ("mesh", ["mesh", args.scene, "--from-result", str(result),
                  "--resolution", "128x256", "--out", str(outdir / "surface.obj")]),
    ]
    for name, argv in steps:
        print(f"--- {name} ---")
        t0 = time.perf_counter()
        code = cli_main(argv)
        print(f"({name}: exit {code}, {time.perf_counter() - t0:.2f}s)\n")
        if code != 0:
            return code
    print(f"artifacts in {outdir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
