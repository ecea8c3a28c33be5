import numpy as np

from peekpop.corpus import DAY, AdoptionLog
from peekpop.windows import CascadeWindow


def write_tsv(path, rows):
    path.write_text("".join("\t".join(str(c) for c in r) + "\n" for r in rows), encoding="utf-8")
    return str(path)


def make_window(adopters, days, item=0, window_end=None, final=0, label=0):
    times = tuple(int(round(d * DAY)) for d in days)
    end = times[-1] if window_end is None else window_end
    return CascadeWindow(item, tuple(adopters), times, end, final, label)


def make_log(events):
    """``events`` are (user, item, seconds) tuples."""
    u, i, t = zip(*events)
    return AdoptionLog.from_events(np.array(u), np.array(i), np.array(t))
