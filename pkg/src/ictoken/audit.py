"""Human-readable provenance report for one IC."""
from __future__ import annotations

from .token_model import ICToken, changed_fields, field_values
from .tracker import NodeState


def service_of(token: ICToken, prev: ICToken | None) -> str:
    """Name of the service that produced ``token`` from ``prev``."""
    if prev is None:
        return "enrollIC"
    diff = changed_fields(token, prev) - {"version", "prev_ver", "key_encr"}
    if "owner" in diff:
        return "transferIC"
    if diff & {"pid", "edid"}:
        return "updatePIDorEDID"
    if "is_defective" in diff:
        return "reportDefective"
    return "updateStage"


def _show(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bytes):
        return value.hex()[:16]
    return str(int(value))


def audit_ic(state: NodeState, icid: bytes, labels: dict[bytes, str] | None = None) -> str:
    """Latest state plus the full version history, newest first.

    Rows are numbered from 1 (row N holds internal version N-1). Each row
    lists the fields that changed and whether the signature re-verifies.
    """
    labels = labels or {}
    history = state.trace_history(icid)  # raises UnknownICID
    name = lambda pid: labels.get(pid, pid.hex()[:16])  # noqa: E731

    latest = history[0].metadata
    out = [
        f"IC {icid.hex()}",
        f"  owner {name(history[0].owner)}  stage {int(latest.stage)}/{int(latest.status)}"
        f"  version {latest.version}  defective {int(latest.is_defective)}",
        f"  pid {_show(latest.pid)}  edid {_show(latest.edid)}",
        f"  history ({len(history)} versions):",
    ]
    all_ok = True
    oldest_first = history[::-1]
    rows = []
    for k, token in enumerate(oldest_first):
        prev = oldest_first[k - 1] if k else None
        ok = state.verify_committed(token)
        all_ok &= ok
        if prev is None:
            diff = "new"
        else:
            a, b = field_values(prev), field_values(token)
            names = sorted(changed_fields(token, prev) - {"version", "prev_ver", "key_encr"})
            diff = ", ".join(f"{n} {_show(a[n]) if n != 'owner' else name(a[n])}"
                             f" -> {_show(b[n]) if n != 'owner' else name(b[n])}"
                             for n in names) or "no field change"
        m = token.metadata
        rows.append(
            f"  row {k + 1:2d} v{m.version:<3d} {service_of(token, prev):16s}"
            f" owner={name(token.owner):10s} {int(m.stage)}/{int(m.status)}"
            f"  sig={'ok' if ok else 'FAIL'}  {diff}")
    out.extend(reversed(rows))
    out.append(f"  signatures: {'all verified' if all_ok else 'FAILURES PRESENT'}")
    return "\n".join(out) + "\n"
