"""Hot loop of the analysis: net loss of every trial in a range for one layer.

Two backends share one contract and one accumulation order, so their output
is bitwise identical:

* ``numba``  - compiled scalar loop (default when numba imports).
* ``numpy``  - vectorised over trials, padded to the longest trial in a
  chunk; padding reads event slot 0 which always holds 0.0.

``VGPURISK_DISABLE_NUMBA=1`` forces the numpy path process-wide.
"""

import os

import numpy as np

_DISABLED = os.environ.get("VGPURISK_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by VGPURISK_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKENDS = ("numba", "numpy")

# elements of the padded (trials x events) work matrix per numpy chunk
_CHUNK_ELEMENTS = 1 << 21


def default_backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


def _layer_losses_py(offsets, event_ids, lo, hi, tables, occ_r, occ_l, agg_r, agg_l, out):
    n_refs = tables.shape[0]
    for t in range(lo, hi):
        total = 0.0
        for k in range(offsets[t], offsets[t + 1]):
            e = event_ids[k]
            event_loss = 0.0
            for j in range(n_refs):
                event_loss += tables[j, e]
            total += min(max(event_loss - occ_r, 0.0), occ_l)
        out[t - lo] += min(max(total - agg_r, 0.0), agg_l)


if HAVE_NUMBA:
    _layer_losses_jit = njit(nogil=True, cache=True)(_layer_losses_py)
else:
    _layer_losses_jit = None


def _layer_losses_numpy(offsets, event_ids, lo, hi, tables, occ_r, occ_l, agg_r, agg_l, out):
    counts_all = np.diff(offsets[lo : hi + 1])
    start = lo
    while start < hi:
        # grow the chunk while the padded matrix stays small
        longest = 1
        stop = start
        while stop < hi:
            cand = max(longest, int(counts_all[stop - lo]))
            if (stop - start + 1) * cand > _CHUNK_ELEMENTS and stop > start:
                break
            longest = cand
            stop += 1
        counts = counts_all[start - lo : stop - lo]
        n = stop - start
        width = int(counts.max()) if n else 0
        if width == 0:
            # empty trials: aggregate terms of a zero total
            out[start - lo : stop - lo] += np.minimum(np.maximum(np.zeros(n) - agg_r, 0.0), agg_l)
            start = stop
            continue
        idx = np.zeros((n, width), dtype=np.intp)
        mask = np.arange(width) < counts[:, None]
        idx[mask] = event_ids[offsets[start] : offsets[stop]]
        event_loss = np.zeros((n, width), dtype=np.float64)
        for j in range(tables.shape[0]):
            event_loss += tables[j][idx]
        np.subtract(event_loss, occ_r, out=event_loss)
        np.maximum(event_loss, 0.0, out=event_loss)
        np.minimum(event_loss, occ_l, out=event_loss)
        by_position = np.ascontiguousarray(event_loss.T)
        total = np.zeros(n, dtype=np.float64)
        for col in by_position:
            total += col
        out[start - lo : stop - lo] += np.minimum(np.maximum(total - agg_r, 0.0), agg_l)
        start = stop


def layer_losses(offsets, event_ids, lo, hi, tables, terms, out, backend=None):
    """Add the layer's net loss for trials ``[lo, hi)`` into ``out[0:hi-lo]``.

    ``tables`` is a dense ``(n_refs, max_id + 1)`` float64 stack with column 0
    zero; ``terms`` is a :class:`~vgpurisk.risk.LayerTerms`.
    """
    backend = backend or default_backend()
    args = (
        offsets,
        event_ids,
        int(lo),
        int(hi),
        tables,
        float(terms.occ_retention),
        float(terms.occ_limit),
        float(terms.agg_retention),
        float(terms.agg_limit),
        out,
    )
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        _layer_losses_jit(*args)
    elif backend == "numpy":
        _layer_losses_numpy(*args)
    elif backend == "python":
        _layer_losses_py(*args)
    else:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
