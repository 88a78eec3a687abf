"""Sparse variational GP modules and data-free meta-GP ensembling.

Workflow: train independent GP modules on data shards (`train_module`),
serialize them (`save_module`), then build single- or multi-output
meta-GPs from the module dictionary alone (`train_meta`, `train_mo_meta`)
-- no training data is revisited.
"""

from .backends import BACKEND_NAME
from .baselines import (DenseGP, ExpertCombination, dense_log_marginal,
                        dense_predict, expert_combination_predict)
from .data import (ColumnSchema, Dataset, SinGeneratorSpec, gen_correlated_tasks,
                   gen_synthetic_sin, gen_two_moons, load_csv_dataset,
                   partition_dataset, save_csv_dataset)
from .gaussians import GaussianDist, expected_log_gaussian, gauss_kl, gaussian_logpdf
from .kernels import KernelParams, kernel_diag, kernel_matrix, kernel_param_grads
from .likelihoods import (LikelihoodSpec, expected_log_lik, link_map,
                          log_predictive_density)
from .linalg import JitterPolicy, cholesky_psd, tri_solve
from .meta import (MetaGP, contrastive_posterior, contrastive_term,
                   export_meta_as_module, meta_elbo, meta_predict, train_meta)
from .metrics import compute_metrics
from .module_io import (ValidationReport, load_module, save_module,
                        validate_dictionary)
from .mogp import (LMCConfig, MOMetaGP, lmc_cross_cov, mo_contrastive_posterior,
                   mo_meta_elbo, mo_predict, train_mo_meta)
from .predictive import Predictive
from .quadrature import gauss_hermite
from .svgp import (GPModule, TrainConfig, local_elbo, marginal_posterior,
                   module_predict, train_module)

__version__ = "0.1.0"
