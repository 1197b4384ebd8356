from .audits import (AuditReport, TailCertificate, audit_rs_constraint, binary_ranking_errors,
                     check_tail_certificate, flip_attack_bound, kl_divergence, kl_lower_bound,
                     kl_tail_certificate, wasserstein_to_empirical, worst_flip_increase)
from .bisect import BisectionOutcome, bisect_fragility
from .inner import InnerProblem, InnerSolution, kl_aggregate, project_frobenius, shrink_to_bound
from .spec import Ambiguity, SolverParams, TargetTooTight, TrainResult, TrainSpec, dumps
from .trainers import (ErmResult, default_gamma, kl_constraint_value, set_target, train,
                       train_erm, train_fi_dro, train_kl, train_wass_ce, train_wass_hinge,
                       train_wass_lipschitz, train_wasserstein)

__all__ = [
    "AuditReport", "TailCertificate", "audit_rs_constraint", "binary_ranking_errors",
    "check_tail_certificate", "flip_attack_bound", "kl_divergence", "kl_lower_bound",
    "kl_tail_certificate", "wasserstein_to_empirical", "worst_flip_increase",
    "BisectionOutcome", "bisect_fragility",
    "InnerProblem", "InnerSolution", "kl_aggregate", "project_frobenius", "shrink_to_bound",
    "Ambiguity", "SolverParams", "TargetTooTight", "TrainResult", "TrainSpec", "dumps",
    "ErmResult", "default_gamma", "kl_constraint_value", "set_target", "train", "train_erm",
    "train_fi_dro", "train_kl", "train_wass_ce", "train_wass_hinge", "train_wass_lipschitz",
    "train_wasserstein",
]
