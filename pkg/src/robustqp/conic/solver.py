"""Reference dense conic solver (LP + SDP).

Primal-dual interior-point method on the homogeneous self-dual embedding
with Nesterov-Todd scaling for PSD blocks and a Mehrotra
predictor-corrector.  Solves

    minimize    c' v   subject to  A v = b,  v in K

with K a product of free, nonnegative and PSD blocks.  Infeasible
problems return Farkas-type certificates instead of raising.

The implementation is deterministic: fixed starting point, no random
perturbations, dense block factorizations.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .program import (
    FREE,
    NONNEG,
    PSD,
    ConicProgram,
    DimensionLimitError,
    SolveResult,
    smat,
    svec,
    svec_indices,
)

_STEP_FRAC = 0.99
_SQRT2 = math.sqrt(2.0)


class _PsdScaling:
    """NT scaling data for one PSD block."""

    def __init__(self, X: np.ndarray, Z: np.ndarray):
        self.n = X.shape[0]
        self.Lx = la.cholesky(X, lower=True, check_finite=False)
        self.Lz = la.cholesky(Z, lower=True, check_finite=False)
        U, s, Vt = la.svd(self.Lz.T @ self.Lx, check_finite=False)
        s = np.maximum(s, 1e-300)
        self.s = s
        rs = 1.0 / np.sqrt(s)
        self.R = self.Lx @ (Vt.T * rs[None, :])
        # R^{-1} = diag(sqrt(s)) V' Lx^{-1}
        self.Rinv = (np.sqrt(s)[:, None] * Vt) @ la.solve_triangular(
            self.Lx, np.eye(self.n), lower=True, check_finite=False
        )
        self.W = self.R @ self.R.T


class _Cones:
    """Parsed block structure of a program."""

    def __init__(self, prog: ConicProgram):
        self.free_slices = []
        self.nn_slices = []
        self.psd_blocks = []  # (slice, order)
        for blk in prog.blocks:
            sl = slice(blk.offset, blk.offset + blk.length)
            if blk.kind == FREE:
                self.free_slices.append(sl)
            elif blk.kind == NONNEG:
                self.nn_slices.append(sl)
            else:
                self.psd_blocks.append((sl, blk.order))
        self.free_idx = np.concatenate(
            [np.arange(sl.start, sl.stop) for sl in self.free_slices]
        ) if self.free_slices else np.empty(0, dtype=int)
        cone_idx = [np.arange(sl.start, sl.stop) for sl in self.nn_slices]
        cone_idx += [np.arange(sl.start, sl.stop) for sl, _ in self.psd_blocks]
        self.cone_idx = np.concatenate(cone_idx) if cone_idx else np.empty(0, dtype=int)
        self.degree = sum(sl.stop - sl.start for sl in self.nn_slices) + sum(
            n for _, n in self.psd_blocks
        )

    def init_point(self, num_vars: int) -> np.ndarray:
        x = np.zeros(num_vars)
        for sl in self.nn_slices:
            x[sl] = 1.0
        for sl, n in self.psd_blocks:
            x[sl] = svec(np.eye(n))
        return x

    def inside(self, v: np.ndarray, margin: float = 0.0) -> bool:
        for sl in self.nn_slices:
            if np.any(v[sl] <= margin):
                return False
        for sl, n in self.psd_blocks:
            try:
                la.cholesky(smat(v[sl], n), lower=True, check_finite=False)
            except la.LinAlgError:
                return False
        return True

    def max_step(self, v: np.ndarray, dv: np.ndarray) -> float:
        """Largest alpha with v + alpha*dv on the cone boundary (inf if none)."""
        alpha = np.inf
        for sl in self.nn_slices:
            neg = dv[sl] < 0
            if np.any(neg):
                alpha = min(alpha, np.min(-v[sl][neg] / dv[sl][neg]))
        for sl, n in self.psd_blocks:
            V = smat(v[sl], n)
            D = smat(dv[sl], n)
            try:
                L = la.cholesky(V, lower=True, check_finite=False)
            except la.LinAlgError:
                return 0.0
            S = la.solve_triangular(L, D, lower=True, check_finite=False)
            S = la.solve_triangular(L, S.T, lower=True, check_finite=False)
            w = np.linalg.eigvalsh(0.5 * (S + S.T))
            if w[0] < 0:
                alpha = min(alpha, -1.0 / w[0])
        return alpha


def _symkron(W: np.ndarray, I: np.ndarray, J: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Symmetric Kronecker product of W with itself on svec entry pairs (I, J),
    with rows and columns scaled by `scale` (svec packing factors folded in)."""
    WI = W[I]
    WJ = W[J]
    G = np.take(WI, I, axis=1)
    G *= np.take(WJ, J, axis=1)
    T2 = np.take(WI, J, axis=1)
    T2 *= np.take(WJ, I, axis=1)
    G += T2
    G *= scale[:, None]
    G *= scale[None, :]
    return G


def _entry_scale(I: np.ndarray, J: np.ndarray) -> np.ndarray:
    return np.where(I == J, 1.0 / _SQRT2, 1.0)


def _add_block(M: np.ndarray, rows: np.ndarray, G: np.ndarray) -> None:
    r = rows.size
    if r and np.array_equal(rows, np.arange(rows[0], rows[0] + r)):
        M[rows[0] : rows[0] + r, rows[0] : rows[0] + r] += G
    else:
        M[np.ix_(rows, rows)] += G


class _Scaling:
    """NT scalings for all cone blocks at the current iterate."""

    def __init__(self, cones: _Cones, x: np.ndarray, z: np.ndarray):
        self.cones = cones
        self.num_vars = x.shape[0]
        self.nn_w2 = []  # x/z per nonneg slice
        self.nn_lmb = []
        self.psd = []
        for sl in cones.nn_slices:
            self.nn_w2.append(x[sl] / z[sl])
            self.nn_lmb.append(np.sqrt(x[sl] * z[sl]))
        for sl, n in cones.psd_blocks:
            self.psd.append(_PsdScaling(smat(x[sl], n), smat(z[sl], n)))

    def mu_terms(self) -> float:
        tot = 0.0
        for lmb in self.nn_lmb:
            tot += float(np.sum(lmb * lmb))
        for ps in self.psd:
            tot += float(np.sum(ps.s * ps.s))
        return tot

    def apply_Hinv(self, u: np.ndarray) -> np.ndarray:
        """H^{-1} u on cone coordinates (free coordinates untouched -> 0)."""
        out = np.zeros_like(u)
        for sl, w2 in zip(self.cones.nn_slices, self.nn_w2):
            out[sl] = w2 * u[sl]
        for (sl, n), ps in zip(self.cones.psd_blocks, self.psd):
            U = smat(u[sl], n)
            out[sl] = svec(ps.W @ U @ ps.W)
        return out

    def scale_primal(self, dx: np.ndarray):
        """W^{-T} dx per block, in scaled-frame coordinates."""
        parts = []
        for sl, w2 in zip(self.cones.nn_slices, self.nn_w2):
            parts.append(dx[sl] / np.sqrt(w2))
        for (sl, n), ps in zip(self.cones.psd_blocks, self.psd):
            D = smat(dx[sl], n)
            parts.append(ps.Rinv @ D @ ps.Rinv.T)
        return parts

    def scale_dual(self, dz: np.ndarray):
        """W dz per block, in scaled-frame coordinates."""
        parts = []
        for sl, w2 in zip(self.cones.nn_slices, self.nn_w2):
            parts.append(dz[sl] * np.sqrt(w2))
        for (sl, n), ps in zip(self.cones.psd_blocks, self.psd):
            D = smat(dz[sl], n)
            parts.append(ps.R.T @ D @ ps.R)
        return parts

    def wz_from_scaled(self, q_parts) -> np.ndarray:
        """Map scaled-frame symmetric data q back through W^{-1} (dual side)."""
        out = np.zeros(self.num_vars)
        for sl, w2, q in zip(self.cones.nn_slices, self.nn_w2, q_parts[: len(self.cones.nn_slices)]):
            out[sl] = q / np.sqrt(w2)
        for (sl, n), ps, q in zip(
            self.cones.psd_blocks, self.psd, q_parts[len(self.cones.nn_slices):]
        ):
            out[sl] = svec(ps.Rinv.T @ q @ ps.Rinv)
        return out

    def lambda_sq_parts(self):
        parts = [lmb * lmb for lmb in self.nn_lmb]
        for ps in self.psd:
            parts.append(np.diag(ps.s * ps.s))
        return parts

    def lyap_solve(self, r_parts):
        """Solve lambda o q = r in the scaled frame, blockwise."""
        out = []
        k = 0
        for lmb in self.nn_lmb:
            out.append(r_parts[k] / lmb)
            k += 1
        for ps in self.psd:
            denom = 0.5 * (ps.s[:, None] + ps.s[None, :])
            out.append(r_parts[k] / denom)
            k += 1
        return out


class _KKT:
    """Factorization of the reduced Newton system for one iteration."""

    def __init__(self, A_cols, cones: _Cones, scaling: _Scaling, reg_ladder):
        self.cones = cones
        self.scaling = scaling
        (self.A, self.A_free, self.A_nn, self.A_psd) = A_cols
        m = self.A.shape[0]
        M = np.zeros((m, m))
        for spec, sl, w2 in zip(self.A_nn, cones.nn_slices, scaling.nn_w2):
            if spec[0] == "sel":
                _, rows, pos, vals = spec
                M[rows, rows] += vals * vals * w2[pos]
            else:
                Ann = spec[1]
                B = Ann.multiply(w2[None, :]).tocsr()
                M += (B @ Ann.T).toarray()
        for spec, (sl, n), ps in zip(self.A_psd, cones.psd_blocks, scaling.psd):
            I, J = svec_indices(n)
            if spec[0] == "sel":
                # rows pick single svec entries: A G A' is a scaled submatrix
                _, rows, pos, vals = spec
                G = _symkron(ps.W, I[pos], J[pos], _entry_scale(I[pos], J[pos]) * vals)
                _add_block(M, rows, G)
            else:
                Apsd = spec[1]
                G = _symkron(ps.W, I, J, _entry_scale(I, J))
                B = Apsd @ G  # dense m x p
                M += Apsd @ np.ascontiguousarray(B.T)
        self.M = M
        diag_scale = max(np.mean(np.abs(np.diag(M))), 1e-14)
        self.L = None
        step = 0.0
        for reg in reg_ladder:
            try:
                delta = reg * diag_scale - step
                if delta:
                    M.flat[:: m + 1] += delta
                    step = reg * diag_scale
                self.L = la.cholesky(M, lower=True, check_finite=False)
                break
            except la.LinAlgError:
                continue
        if self.L is None:
            raise la.LinAlgError("KKT factorization failed after regularization")
        nf = self.A_free.shape[1]
        if nf:
            Af = self.A_free.toarray()
            Y = la.solve_triangular(self.L, Af, lower=True, check_finite=False)
            Gf = Y.T @ Y
            gscale = max(np.mean(np.abs(np.diag(Gf))), 1e-14)
            self.Lf = None
            for reg in reg_ladder:
                try:
                    self.Lf = la.cholesky(Gf + reg * gscale * np.eye(nf), lower=True, check_finite=False)
                    break
                except la.LinAlgError:
                    continue
            if self.Lf is None:
                raise la.LinAlgError("free-block factorization failed")
            self.Af = Af
        else:
            self.Af = np.zeros((m, 0))
            self.Lf = np.zeros((0, 0))

    def _Minv(self, r: np.ndarray) -> np.ndarray:
        t = la.solve_triangular(self.L, r, lower=True, check_finite=False)
        return la.solve_triangular(self.L.T, t, lower=False, check_finite=False)

    def solve_raw(self, u: np.ndarray, v: np.ndarray):
        """Solve H dx_c - Ac' dy = u_c ; -Af' dy = u_f ; A dx = v."""
        cones = self.cones
        hu = self.scaling.apply_Hinv(u)
        t = v - self.A @ hu  # only cone columns of hu are nonzero
        nf = self.Af.shape[1]
        if nf:
            Mt = self._Minv(t)
            rhs_f = self.Af.T @ Mt + u[cones.free_idx]
            w1 = la.solve_triangular(self.Lf, rhs_f, lower=True, check_finite=False)
            dx_f = la.solve_triangular(self.Lf.T, w1, lower=False, check_finite=False)
            dy = self._Minv(t - self.Af @ dx_f)
        else:
            dx_f = np.zeros(0)
            dy = self._Minv(t)
        dx = self.scaling.apply_Hinv(u + self.A.T @ dy)
        dx[cones.free_idx] = dx_f
        return dx, dy

    def solve(self, u: np.ndarray, v: np.ndarray, refine: int = 1):
        dx, dy = self.solve_raw(u, v)
        for _ in range(refine):
            ru, rv = self._residual(dx, dy, u, v)
            ex, ey = self.solve_raw(ru, rv)
            dx = dx + ex
            dy = dy + ey
        return dx, dy

    def _residual(self, dx, dy, u, v):
        cones = self.cones
        Hdx = np.zeros_like(dx)
        for sl, w2 in zip(cones.nn_slices, self.scaling.nn_w2):
            Hdx[sl] = dx[sl] / w2
        for (sl, n), ps in zip(cones.psd_blocks, self.scaling.psd):
            Winv = ps.Rinv.T @ ps.Rinv
            Hdx[sl] = svec(Winv @ smat(dx[sl], n) @ Winv)
        ru = u - (Hdx - self.A.T @ dy)
        ru[cones.free_idx] = u[cones.free_idx] + (self.A.T @ dy)[cones.free_idx]
        rv = v - self.A @ dx
        return ru, rv


def _analyze_block(blk: sp.coo_matrix):
    """Detect pure entry-selection structure (<=1 nnz per row and column)."""
    rows, cols, vals = blk.row, blk.col, blk.data
    if rows.size:
        row_counts = np.bincount(rows, minlength=blk.shape[0])
        col_counts = np.bincount(cols, minlength=blk.shape[1])
        if row_counts.max() <= 1 and col_counts.max() <= 1:
            order = np.argsort(cols, kind="stable")
            return ("sel", rows[order], cols[order], vals[order])
    return ("gen", blk.tocsr())


def _split_columns(A: sp.csr_matrix, cones: _Cones):
    Ac = sp.csc_matrix(A)
    A_free = Ac[:, cones.free_idx] if cones.free_idx.size else sp.csc_matrix((A.shape[0], 0))
    A_nn = [_analyze_block(Ac[:, sl].tocoo()) for sl in cones.nn_slices]
    A_psd = [_analyze_block(Ac[:, sl].tocoo()) for sl, _ in cones.psd_blocks]
    return A, A_free, A_nn, A_psd


def solve(
    prog: ConicProgram,
    tol: float = 1e-7,
    max_iter: int = 100,
    psd_side_limit: int = 300,
    row_limit: int = 5000,
    verbose: bool = False,
) -> SolveResult:
    """Solve a conic program with the reference interior-point method."""
    total_side = sum(blk.order for blk in prog.blocks if blk.kind == PSD)
    if total_side > psd_side_limit:
        raise DimensionLimitError(
            f"total PSD side {total_side} exceeds limit {psd_side_limit}"
        )
    if prog.num_rows > row_limit:
        raise DimensionLimitError(
            f"{prog.num_rows} constraints exceed limit {row_limit}"
        )

    A, b, c = prog.matrices()
    cones = _Cones(prog)
    m, n = A.shape
    if cones.cone_idx.size == 0:
        return _solve_linear_degenerate(prog, A, b, c)

    A_cols = _split_columns(A, cones)
    nu = cones.degree + 1
    reg_ladder = (0.0, 1e-10, 1e-8, 1e-6)

    x = cones.init_point(n)
    z = x.copy()
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0

    bnorm = 1.0 + la.norm(b)
    cnorm = 1.0 + la.norm(c)
    status = "max_iter"
    it = 0
    best = {"maxres": np.inf}
    stall = 0

    def _result(status, it, cert=None, use_best=False):
        if use_best and best["maxres"] < np.inf:
            bx, by_, bz, btau = best["x"], best["y"], best["z"], best["tau"]
        else:
            bx, by_, bz, btau = x, y, z, tau
        if btau > 1e-14:
            xt, yt, zt = bx / btau, by_ / btau, bz / btau
        else:
            xt, yt, zt = bx, by_, bz
        pobj = float(c @ xt) + prog.obj_const
        dobj = float(b @ yt) + prog.obj_const
        pres = la.norm(A @ xt - b) / bnorm
        dres = la.norm(A.T @ yt + zt - c) / cnorm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        if status in ("max_iter", "numerical_failure") and use_best:
            if max(pres, dres, gap) <= tol:
                status = "optimal"
        return SolveResult(
            status=status,
            primal_obj=pobj,
            dual_obj=dobj,
            x=xt,
            y=yt,
            z=zt,
            residuals=(float(pres), float(dres), float(gap)),
            iterations=it,
            certificate=cert,
            program=prog,
        )

    for it in range(1, max_iter + 1):
        rp = A @ x - b * tau
        rd = -(A.T @ y) + c * tau - z
        rg = float(b @ y - c @ x) - kappa
        mu = (float(x[cones.cone_idx] @ z[cones.cone_idx]) + tau * kappa) / nu

        # -- convergence / certificate gates ------------------------------
        xt, yt, zt = x / tau, y / tau, z / tau
        pres = la.norm(A @ xt - b) / bnorm
        dres = la.norm(A.T @ yt + zt - c) / cnorm
        pobj = float(c @ xt)
        dobj = float(b @ yt)
        agap = abs(pobj - dobj) / (1.0 + abs(pobj))
        maxres = max(pres, dres, agap)
        if maxres < 0.9 * best["maxres"]:
            best.update(maxres=maxres, x=x.copy(), y=y.copy(), z=z.copy(), tau=tau)
            stall = 0
        else:
            stall += 1
        if verbose:
            print(f"iter {it:3d}  pres {pres:10.3e}  dres {dres:10.3e} "
                  f"gap {agap:10.3e}  mu {mu:10.3e}  tau {tau:9.3e}  kappa {kappa:9.3e}")
        if maxres <= tol:
            return _result("optimal", it)
        if stall >= 8:
            return _result("max_iter", it, use_best=True)
        by = float(b @ y)
        if by > 1e-12:
            certres = la.norm(A.T @ (y / by) + z / by)
            if certres <= tol * 10:
                cert = {"y": y / by, "z": z / by, "kind": "primal_infeasible"}
                return _result("primal_infeasible", it, cert)
        cx = float(c @ x)
        if cx < -1e-12:
            ray = x / (-cx)
            if la.norm(A @ ray) <= tol * 10:
                cert = {"x": ray, "kind": "dual_infeasible"}
                return _result("dual_infeasible", it, cert)

        # -- scaling + factorization --------------------------------------
        scaling = _Scaling(cones, x, z)
        try:
            kkt = _KKT(A_cols, cones, scaling, reg_ladder)
        except la.LinAlgError:
            return _result("numerical_failure", it, use_best=True)

        dx2, dy2 = kkt.solve(c, -b)
        denom = kappa / tau + float(c @ dx2 - b @ dy2)
        if not np.isfinite(denom) or denom <= 0:
            return _result("numerical_failure", it, use_best=True)

        def direction(r_lam_parts, r_tau, res_scale):
            q = scaling.lyap_solve(r_lam_parts)
            wq = scaling.wz_from_scaled(q)
            u = -res_scale * rd + wq
            u[cones.free_idx] = (-res_scale * rd)[cones.free_idx]
            v = -res_scale * rp
            w = -res_scale * rg + r_tau / tau
            dx1, dy1 = kkt.solve(u, v)
            dtau = (w + float(c @ dx1 - b @ dy1)) / denom
            dx = dx1 - dtau * dx2
            dy = dy1 - dtau * dy2
            dz = -(A.T @ dy) + c * dtau + res_scale * rd
            dz[cones.free_idx] = 0.0
            dkappa = r_tau / tau - (kappa / tau) * dtau
            return dx, dy, dz, dtau, dkappa

        # affine (predictor) direction
        lam2 = scaling.lambda_sq_parts()
        r_aff = [-p for p in lam2]
        dxa, dya, dza, dta, dka = direction(r_aff, -tau * kappa, 1.0)

        alpha_a = min(
            cones.max_step(x, dxa),
            cones.max_step(z, dza),
            (-tau / dta) if dta < 0 else np.inf,
            (-kappa / dka) if dka < 0 else np.inf,
        )
        alpha_a = min(1.0, _STEP_FRAC * alpha_a)
        mu_aff = (
            float((x + alpha_a * dxa)[cones.cone_idx] @ (z + alpha_a * dza)[cones.cone_idx])
            + (tau + alpha_a * dta) * (kappa + alpha_a * dka)
        ) / nu
        sigma = min(1.0, max(1e-8, (mu_aff / mu) ** 3))

        # combined (corrector) direction
        sx = scaling.scale_primal(dxa)
        sz = scaling.scale_dual(dza)
        r_comb = []
        for p_lam2, px, pz in zip(lam2, sx, sz):
            if px.ndim == 1:
                corr = px * pz
                r_comb.append(-p_lam2 + sigma * mu - corr)
            else:
                corr = 0.5 * (px @ pz + pz @ px)
                r_comb.append(-p_lam2 + sigma * mu * np.eye(px.shape[0]) - corr)
        r_tau = -tau * kappa + sigma * mu - dta * dka
        try:
            dx, dy, dz, dtau, dkappa = direction(r_comb, r_tau, 1.0 - sigma)
        except la.LinAlgError:
            return _result("numerical_failure", it, use_best=True)

        alpha = min(
            cones.max_step(x, dx),
            cones.max_step(z, dz),
            (-tau / dtau) if dtau < 0 else np.inf,
            (-kappa / dkappa) if dkappa < 0 else np.inf,
        )
        alpha = min(1.0, _STEP_FRAC * alpha)
        if not np.isfinite(alpha) or alpha <= 1e-14:
            return _result("numerical_failure", it, use_best=True)

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        tau += alpha * dtau
        kappa += alpha * dkappa

    return _result(status, it, use_best=True)


def _solve_linear_degenerate(prog, A, b, c) -> SolveResult:
    """All-free program: plain linear algebra fallback."""
    Ad = A.toarray()
    x, *_ = np.linalg.lstsq(Ad, b, rcond=None)
    if la.norm(Ad @ x - b) > 1e-8 * (1 + la.norm(b)):
        return SolveResult("primal_infeasible", np.inf, np.inf, None, None, None,
                           (np.inf, 0.0, 0.0), 0, None, prog)
    y, *_ = np.linalg.lstsq(Ad.T, c, rcond=None)
    if la.norm(Ad.T @ y - c) > 1e-8 * (1 + la.norm(c)):
        return SolveResult("dual_infeasible", -np.inf, -np.inf, None, None, None,
                           (0.0, np.inf, 0.0), 0, None, prog)
    pobj = float(c @ x) + prog.obj_const
    return SolveResult("optimal", pobj, pobj, x, y, np.zeros_like(x),
                       (0.0, 0.0, 0.0), 0, None, prog)
