"""Reading and writing traces, models, truth files and result tables.

Trace files are comma separated, one ``channel_id,timestamp_seconds`` event
per line, preceded by a ``#output=<channel_id>`` header naming the output
channel and optionally ``#window=<t_start>,<t_end>``::

    #output=proxy
    #window=0,7200
    channel_id,timestamp_seconds
    c0,12.25
    proxy,12.5

Models are JSON.  Floats are written with ``repr`` so they round-trip
exactly.  Tables use 12 significant digits.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import TraceParseError
from .trace_model import CtnorModel, EventTrace


def fmt(x):
    """Fixed 12-significant-digit rendering used in every table."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return f"{x:.12g}"
    return str(x)


def write_table(path, header, rows, sep=","):
    lines = [sep.join(header)]
    lines += [sep.join(fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path, channel_groups=None, output_channel=None) -> EventTrace:
    """Parse a trace file; ``output_channel`` overrides the ``#output`` header."""
    path = Path(path)
    output = None
    window = None
    events = {}
    seen_data = False
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                key = key.strip()
                if key == "output":
                    output = value.strip()
                elif key == "window":
                    try:
                        a, b = (float(v) for v in value.split(","))
                    except ValueError:
                        raise TraceParseError(f"bad window header {line!r}", lineno, path) from None
                    window = (a, b)
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise TraceParseError(f"expected 'channel_id,timestamp', got {line!r}", lineno, path)
            if not seen_data and parts[1] == "timestamp_seconds":
                seen_data = True
                continue
            seen_data = True
            try:
                t = float(parts[1])
            except ValueError:
                raise TraceParseError(f"bad timestamp {parts[1]!r}", lineno, path) from None
            if not math.isfinite(t):
                raise TraceParseError(f"non-finite timestamp {parts[1]!r}", lineno, path)
            events.setdefault(parts[0], []).append(t)
    if output_channel is not None:
        output = output_channel
    if output is None:
        raise TraceParseError("missing '#output=<channel_id>' header", None, path)
    if not events:
        raise TraceParseError("trace has no events", None, path)
    outputs = np.sort(np.array(events.pop(output, []), dtype=float))
    inputs = {ch: np.sort(np.array(ts, dtype=float)) for ch, ts in events.items()}
    try:
        return EventTrace(inputs, outputs, window, channel_groups or {})
    except ValueError as exc:
        raise TraceParseError(str(exc), None, path) from None


def write_trace(path, trace: EventTrace, output_channel="output"):
    """Write a trace; the autocorrelation channel is not written (it mirrors
    the outputs)."""
    lines = [f"#output={output_channel}",
             f"#window={trace.window[0]!r},{trace.window[1]!r}",
             "channel_id,timestamp_seconds"]
    rows = [(float(t), output_channel) for t in trace.output_events]
    for ch, ts in trace.input_channels.items():
        if ch == trace.autocorr_channel:
            continue
        if ch == output_channel:
            raise ValueError(f"input channel named like the output channel {ch!r}")
        rows += [(float(t), ch) for t in ts]
    rows.sort(key=lambda r: (r[0], r[1]))
    lines += [f"{ch},{t!r}" for t, ch in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def dump_model(model: CtnorModel) -> str:
    return json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n"


def write_model(path, model: CtnorModel):
    Path(path).write_text(dump_model(model))


def read_model(path) -> CtnorModel:
    try:
        return CtnorModel.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise TraceParseError(f"bad model file: {exc}", None, path) from None


def write_truth(path, truth):
    rows = [(l, ch, int(k)) for l, (ch, k) in enumerate(zip(truth.cause_channel, truth.cause_index))]
    write_table(path, ["output_index", "cause_channel", "cause_input_index"], rows)


def read_truth(path):
    """Return ``(cause_channel, cause_index)`` lists from a truth file."""
    chans, idx = [], []
    with Path(path).open() as fh:
        header = fh.readline()
        if not header.startswith("output_index"):
            raise TraceParseError("truth file must start with a header", 1, path)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                _, ch, k = line.strip().split(",")
                idx.append(int(k))
            except ValueError:
                raise TraceParseError(f"bad truth row {line.strip()!r}", lineno, path) from None
            chans.append(ch)
    return chans, idx


def write_manifest(path, params: dict):
    Path(path).write_text(json.dumps(params, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
