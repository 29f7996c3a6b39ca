"""Stochastic plug-and-play ADMM for desk-scale CT reconstruction.

Modules
-------
operators    sparse forward operators, row partitions, seeded sampling
ct           Shepp-Logan phantom, parallel-beam Radon matrix, Poisson data
fidelity     least-squares and PWLS data terms with minibatch gradients
denoisers    identity, blurs, blend, median, non-local means, scaling
schedules    inner-loop parameter rules and contraction constants
solvers      PnP-FISTA, PnP-SGD, PnP-ADMM and stochastic PnP-ADMM
diagnostics  inexactness measurements for the stochastic solver
experiment   configuration files, run directories and reports
"""

from .ct import CtGeometry, build_radon, partition_by_angle, poisson_observe, shepp_logan
from .denoisers import (Blend, BoxBlur, GaussianBlur, Identity, Median, NLMeans,
                        ScaledDenoiser, estimate_beta, make_denoiser)
from .diagnostics import compute_diagnostics, estimate_theorem1_bounds
from .fidelity import Fidelity, least_squares, pwls
from .operators import BlockSampler, Partition, SparseOperator, partition_rows, sampler_rng
from .schedules import (Schedule, ScheduleError, contraction_factor, lemma1_parameters,
                        make_theorem1_schedule, min_tau)
from .solvers import (DivergenceError, ProxError, SolverState, dr_operator, prox_exact,
                      run_pnp_admm, run_pnp_fista, run_pnp_sgd, run_stochastic_pnp_admm)

__version__ = "0.1.0"
