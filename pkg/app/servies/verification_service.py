"""
Verification Service
Executable property suites for the CONDOR head: rank consistency, likelihood
identity, gradient checks, the CORAL counterexample, target reconstruction
and the CORAL vs CONDOR expressiveness gap
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from app.core.errors import ConfigError
from app.servies.baseline_service import coral_consistency_check, coral_implied_conditionals, coral_wbce_loss
from app.servies.condor_service import (
    condor_ml_loss,
    condor_wbce_loss,
    conditionals_from_logits,
    marginals_from_conditionals,
    marginals_from_logits,
    sequence_negative_log_likelihood,
    target_conditionals,
)
from app.servies.encoding_service import encode_batch, rank_distribution
from app.servies.head_service import TABLE_ORDER, HeadKind, head_marginals
from app.servies.network_service import ArchSpec, Network, init_network
from app.servies.training_service import Adam, gradient_check

logger = logging.getLogger("condor-ordinal.verification")

CONSISTENCY_RANKS = (2, 3, 5, 10, 50)
LIKELIHOOD_TOLERANCE = 1e-10
GRADCHECK_TOLERANCE = 1e-5
GRADCHECK_STEP = 1e-4
GRADCHECK_RANKS = (2, 3, 5, 10)


class SuiteResult(BaseModel):
    name: str
    checks: int
    failures: int
    worst_error: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0


def consistency_suite(num_nets: int = 1000, num_inputs: int = 100, seed: int = 0) -> SuiteResult:
    """Random CONDOR heads with widely scaled weights never produce rising marginals"""
    rng = np.random.default_rng(seed)
    checks = failures = 0
    worst = 0.0
    for i in range(num_nets):
        K = CONSISTENCY_RANKS[i % len(CONSISTENCY_RANKS)]
        net = init_network(ArchSpec(input_dim=3, hidden=[8], head=HeadKind.CONDOR, num_ranks=K), seed + i)
        scale = 10.0 ** rng.uniform(-1, 1)
        for value in net.parameters().values():
            value *= scale
        x = rng.normal(scale=3.0, size=(num_inputs, 3))
        p = marginals_from_logits(net.forward(x))
        rises = np.diff(p, axis=1)
        rows_bad = np.any(rises > 0, axis=1)
        checks += num_inputs
        failures += int(rows_bad.sum())
        worst = max(worst, float(rises.max(initial=0.0)))
    return SuiteResult(name="consistency", checks=checks, failures=failures, worst_error=worst,
                       detail=f"K in {list(CONSISTENCY_RANKS)}")


def likelihood_suite(num_pairs: int = 1000, num_batches: int = 100, batch_size: int = 20,
                     seed: int = 0) -> SuiteResult:
    """
    ML loss is the negative log-likelihood of the observed rank

    Per example: loss = -ln P(rank) with P from rank_distribution(p).
    Per batch: summed loss equals the chain-rule NLL of the label sequence.
    """
    rng = np.random.default_rng(seed)
    checks = failures = 0
    worst = 0.0

    def record(error: float) -> None:
        nonlocal checks, failures, worst
        checks += 1
        worst = max(worst, error)
        if not error <= LIKELIHOOD_TOLERANCE:
            failures += 1

    for i in range(num_pairs):
        K = int(rng.integers(2, 11))
        net = init_network(ArchSpec(input_dim=3, hidden=[5], head=HeadKind.CONDOR, num_ranks=K), seed + i)
        z = net.forward(rng.normal(size=(1, 3)))
        rank = int(rng.integers(1, K + 1))
        loss, _ = condor_ml_loss(z, encode_batch([rank], K), reduction="sum")
        pmf = rank_distribution(marginals_from_logits(z))[0]
        record(abs(loss + np.log(pmf[rank - 1])))

    for i in range(num_batches):
        K = int(rng.integers(2, 11))
        net = init_network(ArchSpec(input_dim=3, hidden=[5], head=HeadKind.CONDOR, num_ranks=K), seed + num_pairs + i)
        z = net.forward(rng.normal(size=(batch_size, 3)))
        enc = encode_batch(rng.integers(1, K + 1, size=batch_size), K)
        loss, _ = condor_ml_loss(z, enc, reduction="sum")
        nll = sequence_negative_log_likelihood(conditionals_from_logits(z), enc)
        record(abs(loss - nll))

    return SuiteResult(name="likelihood", checks=checks, failures=failures, worst_error=worst,
                       detail=f"{num_pairs} examples, {num_batches} batches of {batch_size}")


def _away_from_kinks(net: Network, x: np.ndarray, margin: float) -> bool:
    net.forward(x)
    return net.min_preactivation_margin() > margin


def gradcheck_suite(num_instances: int = 100, batch_size: int = 5, seed: int = 0,
                    step: float = GRADCHECK_STEP) -> SuiteResult:
    """Backprop vs central differences for every head loss through two hidden ReLU layers"""
    rng = np.random.default_rng(seed)
    checks = failures = 0
    worst = 0.0
    for i in range(num_instances):
        kind = TABLE_ORDER[i % len(TABLE_ORDER)]
        K = int(rng.choice(GRADCHECK_RANKS))
        net = init_network(ArchSpec(input_dim=3, hidden=[4, 3], head=kind, num_ranks=K), seed + i)
        x = rng.normal(size=(batch_size, 3))
        # resample inputs sitting on a ReLU kink
        while not _away_from_kinks(net, x, 10.0 * step):
            x = rng.normal(size=(batch_size, 3))
        ranks = rng.integers(1, K + 1, size=batch_size)
        error = gradient_check(net, x, ranks, step=step)
        checks += 1
        worst = max(worst, error)
        if not error <= GRADCHECK_TOLERANCE:
            failures += 1
            logger.warning(f"gradcheck {kind.value} K={K} instance {i}: relative error {error:.3e}")
    return SuiteResult(name="gradcheck", checks=checks, failures=failures, worst_error=worst,
                       detail=f"heads {[k.value for k in TABLE_ORDER]}, K in {list(GRADCHECK_RANKS)}, step {step:g}")


def coral_witness_suite(num_inputs: int = 10_000, seed: int = 0) -> SuiteResult:
    """CORAL with biases [0, 1]: p_2 > p_1 on every input, witness k = 2"""
    rng = np.random.default_rng(seed)
    net = init_network(ArchSpec(input_dim=2, hidden=[], head=HeadKind.CORAL, num_ranks=3), seed)
    net.parameters()["head.bias"][...] = [0.0, 1.0]
    x = rng.normal(size=(num_inputs, 2))
    p = head_marginals(HeadKind.CORAL, net.forward(x))
    inverted = p[:, 1] > p[:, 0]
    failures = int((~inverted).sum())

    verdict = coral_consistency_check([0.0, 1.0])
    if verdict.consistent or verdict.witness != 2:
        failures += 1
    q = coral_implied_conditionals(net.layers[-1].score(x), [0.0, 1.0])
    if not np.all(q[:, 1] > 1.0):
        failures += 1
    return SuiteResult(
        name="coral-witness",
        checks=num_inputs + 2,
        failures=failures,
        worst_error=float(np.min(p[:, 1] - p[:, 0])),
        detail=f"smallest p_2 - p_1 margin; p_2 > p_1 on {int(inverted.sum())}/{num_inputs} inputs, witness k={verdict.witness}",
    )


def random_consistent_targets(rng: np.random.Generator, count: int, num_ranks: int) -> np.ndarray:
    """Non-increasing marginal vectors in [0, 1]"""
    return np.sort(rng.uniform(size=(count, num_ranks - 1)), axis=1)[:, ::-1]


def reconstruction_suite(num_targets: int = 100, num_ranks: int = 5,
                         epsilons: Sequence[float] = (1e-1, 1e-2, 1e-3), seed: int = 0) -> SuiteResult:
    """Markov-chain product of target_conditionals recovers p* to within 10 K eps"""
    rng = np.random.default_rng(seed)
    p_star = random_consistent_targets(rng, num_targets, num_ranks)
    errors = []
    failures = 0
    for eps in epsilons:
        q = target_conditionals(p_star, eps)
        if not np.all((q > 0) & (q < 1)):
            failures += 1
        error = float(np.max(np.abs(marginals_from_conditionals(q) - p_star)))
        errors.append(error)
        if error > 10 * num_ranks * eps:
            failures += 1
    failures += sum(1 for a, b in zip(errors, errors[1:]) if not b < a)
    return SuiteResult(
        name="reconstruction",
        checks=2 * len(epsilons) + len(epsilons) - 1,
        failures=failures,
        worst_error=max(errors),
        detail=", ".join(f"eps={eps:g}: {err:.2e}" for eps, err in zip(epsilons, errors)),
    )


def expressiveness_target(num_inputs: int = 1) -> Network:
    """Bias-free one-input CONDOR layer with weights (-1, -2): q_k(x) = 1 / (1 + exp(k x))"""
    net = init_network(ArchSpec(input_dim=num_inputs, hidden=[], head=HeadKind.CONDOR, num_ranks=3), 0)
    params = net.parameters()
    params["head.weight"][...] = [[-1.0, -2.0]]
    params["head.bias"][...] = 0.0
    return net


def fit_soft_targets(kind: HeadKind, x: np.ndarray, p_star: np.ndarray, seed: int,
                     steps: int = 3000, lr: float = 0.05) -> Tuple[Network, float]:
    """Full-batch Adam on WBCE against continuous marginals; returns (net, max |p - p*|)"""
    loss_fn = condor_wbce_loss if kind == HeadKind.CONDOR else coral_wbce_loss
    net = init_network(ArchSpec(input_dim=1, hidden=[], head=kind, num_ranks=p_star.shape[1] + 1), seed)
    params = net.parameters()
    optimizer = Adam(params, lr=lr)
    for _ in range(steps):
        _, grad = loss_fn(net.forward(x), p_star)
        optimizer.step(params, net.backward(grad))
    error = float(np.max(np.abs(head_marginals(kind, net.forward(x)) - p_star)))
    return net, error


def expressiveness_suite(seeds: Sequence[int] = (0, 1, 2), grid: int = 61,
                         steps: int = 3000, lr: float = 0.05) -> SuiteResult:
    """A zero-hidden-layer CONDOR head fits q*_k = 1/(1+exp(kx)) more closely than CORAL"""
    x = np.linspace(-3.0, 3.0, grid)[:, None]
    p_star = marginals_from_logits(expressiveness_target().forward(x))
    failures = 0
    worst = 0.0
    lines = []
    for seed in seeds:
        _, condor_error = fit_soft_targets(HeadKind.CONDOR, x, p_star, seed, steps, lr)
        _, coral_error = fit_soft_targets(HeadKind.CORAL, x, p_star, seed, steps, lr)
        worst = max(worst, condor_error)
        if not condor_error < coral_error:
            failures += 1
        lines.append(f"seed {seed}: condor {condor_error:.4f} < coral {coral_error:.4f}")
    return SuiteResult(name="expressiveness", checks=len(seeds), failures=failures,
                       worst_error=worst, detail="; ".join(lines))


class VerificationService:
    """Registry of named property suites, run on demand"""

    def __init__(self, suites: Optional[Dict[str, Callable[[], SuiteResult]]] = None):
        self.suites: Dict[str, Callable[[], SuiteResult]] = dict(suites) if suites is not None else {
            "consistency": consistency_suite,
            "likelihood": likelihood_suite,
            "gradcheck": gradcheck_suite,
            "coral-witness": coral_witness_suite,
            "reconstruction": reconstruction_suite,
            "expressiveness": expressiveness_suite,
        }

    @property
    def names(self) -> List[str]:
        return list(self.suites)

    def resolve(self, names: Optional[Sequence[str]] = None) -> List[str]:
        """Expand 'all' and reject unknown names before anything runs"""
        names = list(names or ["all"])
        if "all" in names:
            return self.names
        unknown = [name for name in names if name not in self.suites]
        if unknown:
            raise ConfigError(f"Unknown suite(s) {unknown}; valid suites: {', '.join(self.suites)}, all")
        return names

    def run(self, names: Optional[Sequence[str]] = None) -> List[SuiteResult]:
        results = []
        for name in self.resolve(names):
            result = self.suites[name]()
            log = logger.info if result.passed else logger.error
            log(f"{name}: {result.checks} checks, {result.failures} failures, worst error {result.worst_error:.3e}")
            results.append(result)
        return results

    @staticmethod
    def format_results(results: Sequence[SuiteResult]) -> str:
        header = ["SUITE", "STATUS", "CHECKS", "FAILURES", "WORST ERROR", "DETAIL"]
        lines = [
            "| " + " | ".join(header) + " |",
            "| " + " | ".join(["---"] * len(header)) + " |",
        ]
        for r in results:
            cells = [r.name, "PASS" if r.passed else "FAIL", str(r.checks), str(r.failures),
                     f"{r.worst_error:.3e}", r.detail]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines)


# Global instance
verification_service = VerificationService()
