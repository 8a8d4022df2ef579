"""
Step-by-step energy budget of the splitting scheme.

For every step the change of the discrete energy is balanced by the
viscous and pressure dissipation, the numerical dissipation of the time
discretization and, for the splitting scheme, two coupling terms coming
from the intermediate solid velocity. The terms are printed next to their
sum, which vanishes up to round-off.

    python3 demos/energy_budget.py [r] [tau]
"""

import sys

from fsisplit import harness as hs
from fsisplit.config import RunConfig
from fsisplit.diagnostics import energy_identity_terms
from fsisplit.schemes import Stepper


def main(r=1, tau=0.1, steps=8):
    cfg = RunConfig().with_label(f"split_r{r}", tau=tau, T=steps * tau)
    disc = hs.build_discretization(cfg)
    stepper = Stepper(disc, cfg.scheme)
    state = disc.zero_state()
    names = None
    for _ in range(steps):
        new = stepper.step(state)
        terms = energy_identity_terms(state, new, disc, cfg.scheme)
        if names is None:
            names = list(terms)
            print("step " + " ".join(f"{n:>17s}" for n in names) + "          sum")
        print(f"{new.step_index:4d} " + " ".join(f"{terms[n]:17.9e}" for n in names)
              + f"  {sum(terms.values()):11.2e}")
        state = new


if __name__ == "__main__":
    args = sys.argv[1:]
    main(int(args[0]) if args else 1, float(args[1]) if len(args) > 1 else 0.1)
