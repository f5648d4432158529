"""Dense operator backend: application, shifted solves, norms, eigen oracle.

Everything downstream (quadrature calculus, sectorial probes, the cone
assembly) goes through the primitives collected here.  Operators are plain
dense complex matrices, optionally equipped with a diagonal weighted-L2
metric; the weighted metric is realized internally by the similarity
D^{1/2} A D^{-1/2} so that norms and singular values are always computed
as ordinary 2-norm quantities.
"""

import csv
import io
import warnings

import numpy as np
import scipy.linalg

from .errors import ArgumentError, DefectiveMatrix, SingularShift

#: condition estimate above which a shifted solve is declared singular
SINGULAR_COND = 1e14

#: residual target for the eigendecomposition oracle (relative to ||A||)
EIGEN_RESIDUAL_TOL = 1e-8


class DenseOperator:
    """Square complex matrix with an optional weighted inner product.

    Parameters
    ----------
    entries : array_like, shape (dim, dim)
        Matrix entries; finite complex numbers.
    inner_weights : array_like, optional
        Strictly positive weights of the discrete weighted-L2 metric.
    label : str, optional
        Free-form identifier carried through reports.
    """

    def __init__(self, entries, inner_weights=None, label=""):
        entries = np.asarray(entries, dtype=complex)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ArgumentError("entries must be a square matrix")
        if entries.shape[0] < 1:
            raise ArgumentError("dim must be >= 1")
        if not np.all(np.isfinite(entries.real)) or not np.all(np.isfinite(entries.imag)):
            raise ArgumentError("entries must be finite")
        self.entries = entries
        self.entries.setflags(write=False)
        self.dim = entries.shape[0]
        if inner_weights is not None:
            inner_weights = np.asarray(inner_weights, dtype=float)
            if inner_weights.shape != (self.dim,):
                raise ArgumentError("inner_weights must have length dim")
            if not np.all(inner_weights > 0):
                raise ArgumentError("inner_weights must be strictly positive")
            inner_weights.setflags(write=False)
        self.inner_weights = inner_weights
        self.label = label

    def __repr__(self):
        return "DenseOperator(dim=%d, label=%r)" % (self.dim, self.label)

    def weighted_entries(self):
        """Entries conjugated into the metric, D^{1/2} A D^{-1/2}."""
        if self.inner_weights is None:
            return self.entries
        d = np.sqrt(self.inner_weights)
        return (self.entries * d[:, None]) / d[None, :]

    def with_entries(self, entries, label=None):
        """New operator with the same metric but different entries."""
        return DenseOperator(entries, inner_weights=self.inner_weights,
                             label=self.label if label is None else label)


def identity_like(A):
    """Identity operator sharing A's dimension and metric."""
    return A.with_entries(np.eye(A.dim, dtype=complex))


def apply(A, v):
    """Return A @ v."""
    v = np.asarray(v, dtype=complex)
    if v.shape[0] != A.dim:
        raise ArgumentError("vector length %d does not match dim %d"
                            % (v.shape[0], A.dim))
    return A.entries @ v


def shifted_solve(A, lam, v):
    """Solve (A + lam*I) w = v by LU with partial pivoting.

    Raises :class:`SingularShift` when the condition estimate of the shifted
    matrix exceeds ``SINGULAR_COND``, i.e. -lam is numerically on the
    spectrum.  ``v`` may be a vector or a matrix of stacked right-hand
    sides (columns).
    """
    v = np.asarray(v, dtype=complex)
    if v.shape[0] != A.dim:
        raise ArgumentError("right-hand side length %d does not match dim %d"
                            % (v.shape[0], A.dim))
    M = A.entries + lam * np.eye(A.dim)
    anorm = np.linalg.norm(M, 1)
    if anorm == 0.0:
        raise SingularShift("A + lambda*I is the zero matrix")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    # reciprocal 1-norm condition estimate from the LU factors
    rcond, info = scipy.linalg.lapack.zgecon(lu, anorm)
    if info != 0 or rcond == 0.0 or 1.0 / rcond > SINGULAR_COND:
        raise SingularShift(
            "shift lambda=%r leaves A + lambda*I numerically singular "
            "(cond ~ %.3e)" % (lam, np.inf if rcond == 0 else 1.0 / rcond))
    return scipy.linalg.lu_solve((lu, piv), v, check_finite=False)


def operator_norm(A):
    """Largest singular value in the (weighted) metric."""
    W = A.weighted_entries()
    return float(scipy.linalg.svdvals(W)[0]) if A.dim else 0.0


def smallest_singular_value(A):
    """Smallest singular value in the (weighted) metric.

    Used by the quadrature layer to bracket the spectrum from below
    (sigma_min <= |eig| for every eigenvalue).
    """
    return float(scipy.linalg.svdvals(A.weighted_entries())[-1])


class EigenData:
    """Result of :func:`eigen_decompose`.

    Attributes
    ----------
    eigenvalues : ndarray
    right_vectors : ndarray
        Columns are right eigenvectors, A V = V diag(eigenvalues).
    condition_estimate : float
        2-norm condition number of the eigenvector matrix (1 for matrices
        normal in the weighted metric).
    """

    def __init__(self, eigenvalues, right_vectors, condition_estimate):
        self.eigenvalues = eigenvalues
        self.right_vectors = right_vectors
        self.condition_estimate = condition_estimate


def _is_hermitian(M, tol=1e-12):
    scale = np.max(np.abs(M)) or 1.0
    return np.max(np.abs(M - M.conj().T)) <= tol * scale


def eigen_decompose(A):
    """Eigendecomposition with a residual guarantee.

    For matrices hermitian in the weighted metric the decomposition is
    computed with ``eigh`` (exactly unitary vectors in that metric);
    otherwise ``eig`` is used and the residual ||AV - V diag(w)|| is
    checked against ``EIGEN_RESIDUAL_TOL * ||A||``.

    Raises :class:`DefectiveMatrix` when the residual target is unreachable,
    which in practice flags Jordan blocks.
    """
    W = A.weighted_entries()
    if _is_hermitian(W):
        w, VW = scipy.linalg.eigh(W)
        w = w.astype(complex)
        cond = 1.0
    else:
        w, VW = scipy.linalg.eig(W)
        svals = scipy.linalg.svdvals(VW)
        if svals[-1] == 0.0:
            raise DefectiveMatrix("eigenvector matrix is singular")
        cond = float(svals[0] / svals[-1])
        # Jordan blocks produce a small residual but a numerically rank
        # deficient eigenvector matrix; reject those as well.
        if cond > 1.0 / EIGEN_RESIDUAL_TOL:
            raise DefectiveMatrix(
                "eigenvector matrix condition %.3e indicates a defective "
                "matrix" % cond)
    if A.inner_weights is not None:
        V = VW / np.sqrt(A.inner_weights)[:, None]
    else:
        V = VW
    anorm = np.linalg.norm(A.entries, 2)
    residual = np.linalg.norm(A.entries @ V - V * w[None, :], 2)
    if anorm > 0 and residual > EIGEN_RESIDUAL_TOL * anorm:
        raise DefectiveMatrix(
            "eigendecomposition residual %.3e exceeds %.1e * ||A||"
            % (residual, EIGEN_RESIDUAL_TOL))
    return EigenData(w, V, cond)


# ---------------------------------------------------------------------------
# CSV import/export, complex entries serialized as "re+imj"


def format_complex(z, digits=17):
    """Serialize a complex number as re+imj with a signed imaginary part."""
    return "%.*g%+.*gj" % (digits, z.real, digits, z.imag)


def parse_complex(text):
    """Inverse of :func:`format_complex`; accepts plain reals as well."""
    s = text.strip()
    try:
        return complex(s)
    except ValueError:
        raise ArgumentError("cannot parse complex entry %r" % text)


def to_csv(A, stream=None):
    """Write the entries of A as CSV rows; returns the text when no stream."""
    own = stream is None
    if own:
        stream = io.StringIO()
    writer = csv.writer(stream, lineterminator="\n")
    for row in A.entries:
        writer.writerow([format_complex(z) for z in row])
    if own:
        return stream.getvalue()
    return None


def from_csv(source, inner_weights=None, label=""):
    """Read a DenseOperator from CSV text or a readable stream.

    The dimension is inferred from the row count; every row must contain
    exactly that many entries.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    rows = [[parse_complex(cell) for cell in row]
            for row in csv.reader(source) if row]
    if not rows:
        raise ArgumentError("empty CSV matrix")
    dim = len(rows)
    for row in rows:
        if len(row) != dim:
            raise ArgumentError("CSV matrix is not square: %d rows, row of "
                                "length %d" % (dim, len(row)))
    return DenseOperator(np.array(rows, dtype=complex),
                         inner_weights=inner_weights, label=label)
