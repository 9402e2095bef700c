"""Print the token wire layout and check real tokens against it."""
from ictoken.scenario import ScenarioScript, run_script
from ictoken.token_model import FIELD_SIZES, PAYLOAD_SIZE, TOKEN_SIZE, encode
from ictoken.tracker import Tracker

offset = 0
print(f"{'field':14s} {'offset':>6s} {'size':>5s}")
for name, size in FIELD_SIZES:
    print(f"{name:14s} {offset:6d} {size:5d}")
    offset += size
print(f"{'total':14s} {'':6s} {TOKEN_SIZE:5d}   signed prefix {PAYLOAD_SIZE}")

_, runner = run_script(ScenarioScript.builtin("multi_ic.scn"), Tracker())
sizes = {len(encode(t)) for t in runner.backend.state.tokens}
print(f"{len(runner.backend.state.tokens)} committed tokens encode to {sorted(sizes)} bytes")
