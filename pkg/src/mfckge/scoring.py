"""Triple scoring models.

Only the translational model ships. Other models would implement the same
three methods and plug into training and inference unchanged.
"""
import numpy as np

from . import kernels
from .errors import DimError

TAIL = "tail"
HEAD = "head"


def transe_score(h_vec, r_vec, t_vec, p=1) -> float:
    """``||h + r - t||_p``; lower means more plausible."""
    h = np.asarray(h_vec, dtype=np.float64)
    r = np.asarray(r_vec, dtype=np.float64)
    t = np.asarray(t_vec, dtype=np.float64)
    if not h.shape == r.shape == t.shape:
        raise DimError(f"vector lengths differ: {h.shape}, {r.shape}, {t.shape}")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    return float(np.linalg.norm(h + r - t, ord=p))


class TransE:
    name = "transe"

    def __init__(self, p: int = 1):
        self.p = p

    def score(self, h_vec, r_vec, t_vec) -> float:
        return transe_score(h_vec, r_vec, t_vec, self.p)

    def query_vector(self, anchor_vec, rel_vec, direction):
        a = np.asarray(anchor_vec, dtype=np.float64)
        r = np.asarray(rel_vec, dtype=np.float64)
        # tail query: ||h + r - e||; head query: ||e + r - t|| = ||e - (t - r)||
        return a + r if direction == TAIL else a - r

    def candidate_scores(self, query_vec, matrix):
        """Prediction scores ``-||q - e||_p`` for every row of ``matrix``."""
        return -kernels.distances(query_vec, matrix, self.p)
