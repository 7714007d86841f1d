"""Independent numerical oracles shared by the test modules."""
import numpy as np


def fd_jacobian(fn, z, step=1e-6):
    """Central-difference Jacobian of fn: R^D -> R^D at a single point z (shape (D,))."""
    z = np.asarray(z, dtype=np.float64)
    D = z.size
    J = np.zeros((D, D))
    for j in range(D):
        e = np.zeros(D)
        e[j] = step
        J[:, j] = (fn(z + e) - fn(z - e)) / (2 * step)
    return J


def pushforward_grid_mass(transform, log_q0, lo=-6.0, hi=6.0, cells=400):
    """Integrate q_K over the image of a square grid.

    Each base cell is mapped forward corner by corner; its image area is the
    shoelace area of the mapped quadrilateral (no Jacobian formula involved).
    ``transform`` maps (N, 2) -> ((N, 2), log_det (N,)); only the first output
    is used for geometry, the log-det enters through q_K(z_K) = q0 - log_det.
    """
    edges = np.linspace(lo, hi, cells + 1)
    gx, gy = np.meshgrid(edges, edges, indexing="ij")
    corners = np.stack([gx.ravel(), gy.ravel()], axis=1)
    mapped, _ = transform(corners)
    mx = mapped[:, 0].reshape(cells + 1, cells + 1)
    my = mapped[:, 1].reshape(cells + 1, cells + 1)
    # quad corners in order: (i,j) (i+1,j) (i+1,j+1) (i,j+1)
    xs = [mx[:-1, :-1], mx[1:, :-1], mx[1:, 1:], mx[:-1, 1:]]
    ys = [my[:-1, :-1], my[1:, :-1], my[1:, 1:], my[:-1, 1:]]
    area = 0.5 * np.abs(sum(xs[k] * ys[(k + 1) % 4] - xs[(k + 1) % 4] * ys[k] for k in range(4)))
    centres = 0.5 * (edges[:-1] + edges[1:])
    cx, cy = np.meshgrid(centres, centres, indexing="ij")
    c = np.stack([cx.ravel(), cy.ravel()], axis=1)
    _, logdet = transform(c)
    log_qK = log_q0(c) - logdet
    return float(np.sum(np.exp(log_qK) * area.ravel()))


def random_flow_params(rng, dim, scale=1.0):
    u = rng.normal(0, scale, size=dim)
    w = rng.normal(0, scale, size=dim)
    b = rng.normal(0, scale)
    return u, w, b


def mc_kl(mu, logvar, n, rng):
    """Monte-Carlo KL(q || N(0, I)) with its standard error."""
    sd = np.exp(0.5 * logvar)
    z = mu + sd * rng.standard_normal((n, mu.size))
    log_q = np.sum(-0.5 * ((z - mu) / sd) ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi), axis=1)
    log_p = np.sum(-0.5 * z ** 2 - 0.5 * np.log(2 * np.pi), axis=1)
    d = log_q - log_p
    return d.mean(), d.std(ddof=1) / np.sqrt(n)
