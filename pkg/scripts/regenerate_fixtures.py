"""Rewrite the bundled fixture field and the golden Green's-function CSV.

Run from the repository root after an intentional change to the transfer
oracle; the golden file must then be reviewed like any other code change.
"""

from pathlib import Path

import numpy as np

from mkdvlab import spectral
from mkdvlab.harness.experiments import read_field
from mkdvlab.greens import diag_greens_oracle, resolvent_matrix
from mkdvlab.lattice import smooth_random_field

ROOT = Path(__file__).resolve().parents[1]
N, HALF_PERIOD, KAPPA, SEED = 128, np.pi, 8.0, 2024


def main() -> None:
    x = spectral.grid(N, HALF_PERIOD)
    q = smooth_random_field(np.random.default_rng(SEED), N, HALF_PERIOD, modes=6, amplitude=1.5)
    with open(ROOT / "src/mkdvlab/data/fixture_field.csv", "w") as fh:
        fh.write("x,q\n")
        for a, b in zip(x, q):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
    # reread so the golden file is computed from exactly the parsed values
    x, q = read_field(ROOT / "src/mkdvlab/data/fixture_field.csv")
    dg = diag_greens_oracle(resolvent_matrix(q, float(-x[0]), KAPPA, "transfer"))
    dg.to_csv(ROOT / "tests/data/fixture_diag_greens.csv", x)


if __name__ == "__main__":
    main()
