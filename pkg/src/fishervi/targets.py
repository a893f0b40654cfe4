"""Posterior target models: log h(theta), gradient and sparse Hessian.

Each model exposes the unnormalized log posterior log h(theta) =
log p(theta) + log p(y | theta) including all constants (they matter for
lower-bound traces), its gradient, and a Hessian confined to the model's
conditional-independence pattern.  Evaluation is pure; models are immutable
after construction.
"""
from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np
import scipy.sparse
from scipy.special import expit, gammaln

from .linalg import SparsityPattern, build_dense_pattern, build_pattern

LOG_2PI = float(np.log(2.0 * np.pi))


def softplus(x):
    """log(1 + exp(x)), stable for large |x|."""
    return np.logaddexp(0.0, x)


@runtime_checkable
class TargetModel(Protocol):
    dim: int

    def sparsity_hint(self) -> SparsityPattern: ...

    def log_h(self, theta: np.ndarray) -> float: ...

    def grad_log_h(self, theta: np.ndarray) -> np.ndarray: ...

    def hess_log_h(self, theta: np.ndarray): ...


def _check_theta(theta, dim):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dim,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({dim},)")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta contains non-finite entries")
    return theta


def _check_finite(value, context):
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite result in {context}")
    return value


class GaussianTarget:
    """Gaussian posterior N(nu, Lambda^{-1}); the closed-form analytics target."""

    def __init__(self, nu, lamb):
        self.nu = np.asarray(nu, dtype=float)
        self.lamb = np.asarray(lamb, dtype=float)
        self.dim = self.nu.size
        if self.lamb.shape != (self.dim, self.dim):
            raise ValueError("precision shape does not match mean")
        if not np.allclose(self.lamb, self.lamb.T, atol=1e-10):
            raise ValueError("precision must be symmetric")
        try:
            chol = np.linalg.cholesky(self.lamb)
        except np.linalg.LinAlgError as exc:
            raise ValueError("precision must be positive definite") from exc
        self._log_det_lamb = 2.0 * float(np.sum(np.log(np.diag(chol))))

    def sparsity_hint(self) -> SparsityPattern:
        return build_dense_pattern(self.dim)

    def log_h(self, theta) -> float:
        theta = _check_theta(theta, self.dim)
        r = theta - self.nu
        val = -0.5 * self.dim * LOG_2PI + 0.5 * self._log_det_lamb - 0.5 * r @ (self.lamb @ r)
        return float(_check_finite(val, "GaussianTarget.log_h"))

    def grad_log_h(self, theta) -> np.ndarray:
        theta = _check_theta(theta, self.dim)
        return -self.lamb @ (theta - self.nu)

    def hess_log_h(self, theta) -> np.ndarray:
        _check_theta(theta, self.dim)
        return -self.lamb


class LogisticModel:
    """Bayesian logistic regression, logit(p_i) = X_i^t theta, prior N(0, s0^2 I).

    X may be dense or scipy.sparse; the precision of the variational
    approximation is a full matrix here so the sparsity hint is dense.
    """

    def __init__(self, X, y, sigma0_sq: float = 100.0):
        self.sparse = scipy.sparse.issparse(X)
        self.X = X.tocsr() if self.sparse else np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.y.ndim != 1 or self.X.shape[0] != self.y.size:
            raise ValueError("X and y have inconsistent shapes")
        if self.y.size < 1:
            raise ValueError("need at least one observation")
        if not np.all(np.isin(self.y, (0.0, 1.0))):
            raise ValueError("responses must be binary 0/1")
        self.n, self.dim = self.X.shape
        self.sigma0_sq = float(sigma0_sq)

    def sparsity_hint(self) -> SparsityPattern:
        return build_dense_pattern(self.dim)

    def _logits(self, theta):
        return self.X @ theta

    def log_h(self, theta) -> float:
        theta = _check_theta(theta, self.dim)
        eta = self._logits(theta)
        val = (
            float(self.y @ eta)
            - float(np.sum(softplus(eta)))
            - 0.5 * self.dim * np.log(2.0 * np.pi * self.sigma0_sq)
            - 0.5 * float(theta @ theta) / self.sigma0_sq
        )
        return float(_check_finite(val, "LogisticModel.log_h"))

    def grad_log_h(self, theta) -> np.ndarray:
        theta = _check_theta(theta, self.dim)
        w = expit(self._logits(theta))
        resid = self.y - w
        xt_r = self.X.T @ resid
        if self.sparse:
            xt_r = np.asarray(xt_r).ravel()
        return xt_r - theta / self.sigma0_sq

    def hess_log_h(self, theta):
        theta = _check_theta(theta, self.dim)
        w = expit(self._logits(theta))
        wv = w * (1.0 - w)
        if self.sparse:
            xw = self.X.multiply(wv[:, None]).tocsr()
            h = -(self.X.T @ xw) - scipy.sparse.identity(self.dim, format="csr") / self.sigma0_sq
            return h.tocsr()
        h = -(self.X.T * wv) @ self.X
        h[np.diag_indices(self.dim)] -= 1.0 / self.sigma0_sq
        return h


def _vech_indices(r):
    """Row/col index arrays of the lower triangle of an r x r matrix, column-major."""
    cols, rows = [], []
    for c in range(r):
        for rr in range(c, r):
            rows.append(rr)
            cols.append(c)
    return np.asarray(rows, dtype=int), np.asarray(cols, dtype=int)


class GlmmModel:
    """GLMM with canonical link: g(mu_ij) = X_ij^t beta + Z_ij^t b_i.

    theta is laid out as (b_1, ..., b_n, beta, zeta) with zeta = vech(W*),
    where the random-effect precision is G = W W^t, W lower triangular with
    positive diagonal, W*_ii = log W_ii.  Priors: b_i ~ N(0, G^{-1}),
    beta ~ N(0, sigma_beta_sq I), zeta ~ N(0, sigma_zeta_sq I).
    """

    FAMILIES = ("bernoulli-logit", "poisson-log")

    def __init__(self, family, X_blocks, Z_blocks, y_blocks,
                 sigma_beta_sq: float = 100.0, sigma_zeta_sq: float = 100.0):
        if family not in self.FAMILIES:
            raise ValueError(f"family must be one of {self.FAMILIES}")
        self.family = family
        self.X_blocks = [np.asarray(x, dtype=float) for x in X_blocks]
        self.Z_blocks = [np.asarray(z, dtype=float) for z in Z_blocks]
        self.y_blocks = [np.asarray(yy, dtype=float) for yy in y_blocks]
        self.n_subjects = len(self.X_blocks)
        if not (len(self.Z_blocks) == len(self.y_blocks) == self.n_subjects >= 1):
            raise ValueError("block lists must have equal nonzero length")
        self.p = self.X_blocks[0].shape[1]
        self.r = self.Z_blocks[0].shape[1]
        for xi, zi, yi in zip(self.X_blocks, self.Z_blocks, self.y_blocks):
            if xi.shape[0] != zi.shape[0] or xi.shape[0] != yi.size:
                raise ValueError("inconsistent rows within a subject block")
            if xi.shape[1] != self.p or zi.shape[1] != self.r:
                raise ValueError("inconsistent covariate dimensions across subjects")
        self.sigma_beta_sq = float(sigma_beta_sq)
        self.sigma_zeta_sq = float(sigma_zeta_sq)
        self.n_zeta = self.r * (self.r + 1) // 2
        self.dim = self.n_subjects * self.r + self.p + self.n_zeta
        self._wrows, self._wcols = _vech_indices(self.r)
        self._wdiag = np.flatnonzero(self._wrows == self._wcols)
        if self.family == "poisson-log":
            self._y_const = -sum(float(np.sum(gammaln(yy + 1.0))) for yy in self.y_blocks)
        else:
            self._y_const = 0.0
            for yy in self.y_blocks:
                if not np.all(np.isin(yy, (0.0, 1.0))):
                    raise ValueError("bernoulli responses must be binary 0/1")

    # canonical-family log partition A and derivatives, analytic
    def _A(self, eta):
        if self.family == "bernoulli-logit":
            return softplus(eta)
        return np.exp(eta)

    def _A1(self, eta):
        if self.family == "bernoulli-logit":
            return expit(eta)
        return np.exp(eta)

    def _A2(self, eta):
        if self.family == "bernoulli-logit":
            w = expit(eta)
            return w * (1.0 - w)
        return np.exp(eta)

    def sparsity_hint(self) -> SparsityPattern:
        return build_pattern(self.n_subjects, [self.r] * self.n_subjects,
                             self.p + self.n_zeta, 0)

    def unpack(self, theta):
        theta = _check_theta(theta, self.dim)
        nb = self.n_subjects * self.r
        b = theta[:nb].reshape(self.n_subjects, self.r)
        beta = theta[nb:nb + self.p]
        zeta = theta[nb + self.p:]
        return b, beta, zeta

    def w_matrix(self, zeta):
        """(W, dvec) from zeta = vech(W*); dvec is the vech(T*) chain-rule scale."""
        w = np.zeros((self.r, self.r))
        w[self._wrows, self._wcols] = zeta
        diag = np.exp(zeta[self._wdiag])
        w[np.arange(self.r), np.arange(self.r)] = diag
        dvec = np.ones(self.n_zeta)
        dvec[self._wdiag] = diag
        return w, dvec

    def log_h(self, theta) -> float:
        b, beta, zeta = self.unpack(theta)
        w, _ = self.w_matrix(zeta)
        val = self._y_const
        for i in range(self.n_subjects):
            eta = self.X_blocks[i] @ beta + self.Z_blocks[i] @ b[i]
            val += float(self.y_blocks[i] @ eta - np.sum(self._A(eta)))
        wtb = b @ w  # row i is b_i^t W
        val += self.n_subjects * float(np.sum(zeta[self._wdiag]))  # n log|W|
        val -= 0.5 * float(np.sum(wtb * wtb))
        val -= 0.5 * self.n_subjects * self.r * LOG_2PI
        val -= 0.5 * float(beta @ beta) / self.sigma_beta_sq
        val -= 0.5 * self.p * np.log(2.0 * np.pi * self.sigma_beta_sq)
        val -= 0.5 * float(zeta @ zeta) / self.sigma_zeta_sq
        val -= 0.5 * self.n_zeta * np.log(2.0 * np.pi * self.sigma_zeta_sq)
        return float(_check_finite(val, "GlmmModel.log_h"))

    def grad_log_h(self, theta) -> np.ndarray:
        b, beta, zeta = self.unpack(theta)
        w, dvec = self.w_matrix(zeta)
        g_mat = w @ w.T
        grad = np.zeros(self.dim)
        g_beta = -beta / self.sigma_beta_sq
        for i in range(self.n_subjects):
            eta = self.X_blocks[i] @ beta + self.Z_blocks[i] @ b[i]
            resid = self.y_blocks[i] - self._A1(eta)
            grad[i * self.r:(i + 1) * self.r] = self.Z_blocks[i].T @ resid - g_mat @ b[i]
            g_beta += self.X_blocks[i].T @ resid
        nb = self.n_subjects * self.r
        grad[nb:nb + self.p] = g_beta
        w_tilde = (b.T @ b) @ w  # sum_i b_i b_i^t W
        g_zeta = -dvec * w_tilde[self._wrows, self._wcols]
        g_zeta[self._wdiag] += self.n_subjects
        g_zeta -= zeta / self.sigma_zeta_sq
        grad[nb + self.p:] = g_zeta
        return _check_finite(grad, "GlmmModel.grad_log_h")

    def hess_log_h(self, theta):
        b, beta, zeta = self.unpack(theta)
        w, dvec = self.w_matrix(zeta)
        g_mat = w @ w.T
        n, r, p, nz = self.n_subjects, self.r, self.p, self.n_zeta
        nb = n * r
        h = scipy.sparse.lil_matrix((self.dim, self.dim))

        h_beta = -np.eye(p) / self.sigma_beta_sq
        bsum = b.T @ b
        for i in range(n):
            eta = self.X_blocks[i] @ beta + self.Z_blocks[i] @ b[i]
            a2 = self._A2(eta)
            zi = self.Z_blocks[i]
            xi = self.X_blocks[i]
            sl = slice(i * r, (i + 1) * r)
            h[sl, sl] = -(zi.T * a2) @ zi - g_mat
            cross = -(xi.T * a2) @ zi  # d2/dbeta db_i
            h[nb:nb + p, sl] = cross
            h[sl, nb:nb + p] = cross.T
            h_beta -= (xi.T * a2) @ xi
            # d2/dzeta db_i = -D^W L (W^t b_i kron I_r + W^t kron b_i)
            u = w.T @ b[i]
            blk = np.zeros((nz, r))
            blk[np.arange(nz), self._wrows] = u[self._wcols]
            blk += w.T[self._wcols, :] * b[i][self._wrows][:, None]
            blk *= -dvec[:, None]
            h[nb + p:, sl] = blk
            h[sl, nb + p:] = blk.T
        h[nb:nb + p, nb:nb + p] = h_beta

        # d2/dzeta2 = -S - D^W L sum_i (I_r kron b_i b_i^t) L^t D^W - I/sigma_zeta^2
        w_tilde = bsum @ w
        s_diag = np.zeros(nz)
        s_diag[self._wdiag] = np.diag(w)[self._wrows[self._wdiag]] * \
            np.diag(w_tilde)[self._wrows[self._wdiag]]
        same_col = self._wcols[:, None] == self._wcols[None, :]
        kmat = same_col * bsum[np.ix_(self._wrows, self._wrows)]
        h_zeta = -(dvec[:, None] * kmat * dvec[None, :])
        h_zeta[np.arange(nz), np.arange(nz)] -= s_diag + 1.0 / self.sigma_zeta_sq
        h[nb + p:, nb + p:] = h_zeta
        return h.tocsr()


class SvModel:
    """Stochastic volatility: y_t ~ N(0, exp(lambda + sigma b_t)) with AR(1) states.

    theta = (b_1, ..., b_n, alpha, lambda, psi), alpha = log sigma,
    psi = logit(phi); b_t | b_{t-1} ~ N(phi b_{t-1}, 1) and
    b_1 ~ N(0, 1/(1-phi^2)).  Prior on the globals is N(0, sigma0_sq I).
    """

    def __init__(self, y, sigma0_sq: float = 10.0):
        self.y = np.asarray(y, dtype=float)
        if self.y.ndim != 1 or self.y.size < 1:
            raise ValueError("y must be a nonempty 1-d return series")
        self.n = self.y.size
        self.dim = self.n + 3
        self.sigma0_sq = float(sigma0_sq)

    def sparsity_hint(self) -> SparsityPattern:
        return build_pattern(self.n, [1] * self.n, 3, 1) if self.n > 1 \
            else build_pattern(1, [1], 3, 0)

    def unpack(self, theta):
        theta = _check_theta(theta, self.dim)
        return theta[:self.n], theta[self.n], theta[self.n + 1], theta[self.n + 2]

    def log_h(self, theta) -> float:
        b, alpha, lam, psi = self.unpack(theta)
        sigma = np.exp(alpha)
        phi = expit(psi)
        e = np.exp(-lam - sigma * b)
        val = -0.5 * self.n * LOG_2PI - 0.5 * self.n * lam \
            - 0.5 * sigma * np.sum(b) - 0.5 * float(self.y ** 2 @ e)
        if self.n > 1:
            innov = b[1:] - phi * b[:-1]
            val += -0.5 * (self.n - 1) * LOG_2PI - 0.5 * float(innov @ innov)
        val += -0.5 * LOG_2PI + 0.5 * np.log1p(-phi ** 2) - 0.5 * b[0] ** 2 * (1.0 - phi ** 2)
        val -= 1.5 * np.log(2.0 * np.pi * self.sigma0_sq)
        val -= 0.5 * (alpha ** 2 + lam ** 2 + psi ** 2) / self.sigma0_sq
        return float(_check_finite(val, "SvModel.log_h"))

    def grad_log_h(self, theta) -> np.ndarray:
        b, alpha, lam, psi = self.unpack(theta)
        n = self.n
        sigma = np.exp(alpha)
        phi = expit(psi)
        dphi = phi * (1.0 - phi)  # e^psi/(e^psi+1)^2
        e = np.exp(-lam - sigma * b)
        y2e = self.y ** 2 * e

        g_b = -0.5 * sigma + 0.5 * sigma * y2e
        g_b[0] += -(1.0 - phi ** 2) * b[0]
        if n > 1:
            innov = b[1:] - phi * b[:-1]
            g_b[:-1] += phi * innov
            g_b[1:] -= innov
        g_alpha = 0.5 * sigma * float(b @ y2e) - 0.5 * sigma * np.sum(b) \
            - alpha / self.sigma0_sq
        g_lam = -0.5 * n + 0.5 * float(np.sum(y2e)) - lam / self.sigma0_sq
        p_phi = phi * b[0] ** 2 - phi / (1.0 - phi ** 2)
        if n > 1:
            p_phi += float((b[1:] - phi * b[:-1]) @ b[:-1])
        g_psi = p_phi * dphi - psi / self.sigma0_sq
        grad = np.concatenate([g_b, [g_alpha, g_lam, g_psi]])
        return _check_finite(grad, "SvModel.grad_log_h")

    def hess_log_h(self, theta):
        b, alpha, lam, psi = self.unpack(theta)
        n = self.n
        sigma = np.exp(alpha)
        phi = expit(psi)
        dphi = phi * (1.0 - phi)
        # second derivative of phi wrt psi: e^psi (1 - e^psi) / (e^psi + 1)^3
        d2phi = dphi * (1.0 - 2.0 * phi)
        e = np.exp(-lam - sigma * b)
        y2e = self.y ** 2 * e

        diag_b = -0.5 * sigma ** 2 * y2e
        diag_b[0] -= 1.0 - phi ** 2
        if n > 1:
            diag_b[0] -= phi ** 2
            diag_b[1:-1] -= 1.0 + phi ** 2
            diag_b[-1] -= 1.0

        h = scipy.sparse.lil_matrix((self.dim, self.dim))
        idx = np.arange(n)
        h[idx, idx] = diag_b
        if n > 1:
            h[idx[:-1], idx[1:]] = phi
            h[idx[1:], idx[:-1]] = phi

        # cross terms with the globals
        h_b_alpha = 0.5 * sigma * y2e * (1.0 - sigma * b) - 0.5 * sigma
        h_b_lam = -0.5 * sigma * y2e
        # d(grad b_1)/dphi = 2 phi b_1 + b_2 - 2 phi b_1 = b_2 for n > 1;
        # for n = 1 only the stationary prior contributes, giving 2 phi b_1.
        h_b_psi = np.zeros(n)
        if n > 1:
            h_b_psi[0] = b[1] * dphi
            h_b_psi[1:-1] = (b[2:] - 2.0 * phi * b[1:-1] + b[:-2]) * dphi
            h_b_psi[-1] = b[-2] * dphi
        else:
            h_b_psi[0] = 2.0 * phi * b[0] * dphi

        ia, il, ip = n, n + 1, n + 2
        h[idx, ia] = h_b_alpha
        h[ia, idx] = h_b_alpha
        h[idx, il] = h_b_lam
        h[il, idx] = h_b_lam
        h[idx, ip] = h_b_psi
        h[ip, idx] = h_b_psi

        h_aa = 0.5 * float((b * y2e) @ (1.0 - sigma * b)) * sigma \
            - 0.5 * sigma * np.sum(b) - 1.0 / self.sigma0_sq
        h_ll = -0.5 * float(np.sum(y2e)) - 1.0 / self.sigma0_sq
        h_al = -0.5 * sigma * float(b @ y2e)
        p_phi = phi * b[0] ** 2 - phi / (1.0 - phi ** 2)
        dp_dphi = b[0] ** 2 - (1.0 + phi ** 2) / (1.0 - phi ** 2) ** 2
        if n > 1:
            p_phi += float((b[1:] - phi * b[:-1]) @ b[:-1])
            dp_dphi -= float(b[:-1] @ b[:-1])
        h_pp = dp_dphi * dphi ** 2 + p_phi * d2phi - 1.0 / self.sigma0_sq
        h[ia, ia] = h_aa
        h[il, il] = h_ll
        h[ia, il] = h_al
        h[il, ia] = h_al
        h[ip, ip] = h_pp
        # d2/dpsi dlambda = d2/dpsi dalpha = 0
        return h.tocsr()
