import numpy as np
import pytest

from alsopt import BoxDomain, CostFunction, DDUProblem, GroundTruthModel

SQRT3 = float(np.sqrt(3.0))


def make_affine_truth(A, b, sd=None, rng_dim=None):
    """Ground truth with an affine mean and constant diagonal sd."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    ell, d = A.shape
    sd = np.full(ell, 0.5) if sd is None else np.asarray(sd, dtype=float)

    def mean(x):
        return np.asarray(x, dtype=float) @ A.T + b

    def sd_diag(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return sd.copy()
        return np.broadcast_to(sd, (x.shape[0], ell)).copy()

    def sampler(rng, size):
        return rng.uniform(-SQRT3, SQRT3, size=(size, ell)), None

    return GroundTruthModel(
        response_dim=ell,
        mean=mean,
        mean_jacobian=lambda x: A.copy(),
        sd_diag=sd_diag,
        residual_sampler=sampler,
    )


def make_smooth_truth():
    """Smooth 2-d heteroscedastic model used by the rate experiments."""

    def mean(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([np.exp(0.4 * x1 + 0.25 * x2),
                         np.sin(1.3 * x1) + 0.5 * x2 * x2], axis=-1)

    def mean_jacobian(x):
        x1, x2 = float(x[0]), float(x[1])
        e = np.exp(0.4 * x1 + 0.25 * x2)
        return np.array([[0.4 * e, 0.25 * e],
                         [1.3 * np.cos(1.3 * x1), x2]])

    def sd_diag(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([0.6 + 0.1 * x1, 0.5 + 0.15 * x2], axis=-1)

    def sd_jacobian(x):
        return np.array([[0.1, 0.0], [0.0, 0.15]])

    def sampler(rng, size):
        return rng.uniform(-SQRT3, SQRT3, size=(size, 2)), None

    return GroundTruthModel(
        response_dim=2,
        mean=mean,
        mean_jacobian=mean_jacobian,
        sd_diag=sd_diag,
        residual_sampler=sampler,
        sd_jacobian=sd_jacobian,
    )


def make_tracking_cost(target):
    """Smooth convex cost ||s - target||^2 (no direct decision dependence)."""
    target = np.asarray(target, dtype=float)

    def value(x, S, aux=None, product=None):
        S = np.atleast_2d(S)
        diff = S - target
        return np.sum(diff * diff, axis=1)

    def subgrad(x, S, aux=None, product=None):
        S = np.atleast_2d(S)
        n, d = S.shape[0], np.asarray(x).shape[0]
        return np.zeros((n, d)), 2.0 * (S - target), None

    return CostFunction(value=value, subgrad=subgrad, smooth=True)


def make_tracking_problem(truth, domain, target):
    cost = make_tracking_cost(target)
    return DDUProblem(domain=domain, response_dim=truth.response_dim, cost=cost)


@pytest.fixture(scope="session")
def smooth_truth():
    return make_smooth_truth()


@pytest.fixture(scope="session")
def smooth_domain():
    return BoxDomain(np.zeros(2), np.full(2, 2.0))
