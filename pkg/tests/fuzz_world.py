"""A committed fixture state plus seeded generators of mutated submissions.

Every generator starts from a submission an honest wallet would make and
applies a random subset of mutations, so single violations, multiple
violations and untouched valid submissions all occur.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from ictoken.crypto import sha256
from ictoken.token_model import ICToken, compute_edid, compute_pid
from ictoken.tracker import Tracker
from ictoken.wallet import Wallet


@dataclass
class World:
    tracker: Tracker
    wallets: dict[str, Wallet]
    stranger: Wallet
    groups: dict[str, list[bytes]] = field(default_factory=dict)
    uids: list[str] = field(default_factory=list)

    @property
    def state(self):
        return self.tracker.state

    def wallet_of(self, public_id: bytes) -> Wallet | None:
        for w in [*self.wallets.values(), self.stranger]:
            if w.public_id == public_id:
                return w
        return None

    def latest(self, icid: bytes) -> ICToken:
        return self.state.tokens[self.state.icdb[icid]]

    @property
    def all_icids(self) -> list[bytes]:
        return sorted(self.state.icdb)


def build_world(seed: int = 7) -> World:
    tracker = Tracker(capacity=64)
    wallets = {name: Wallet.create(role, seed=f"fuzz:{seed}:{name}", tracker=tracker)
               for name, role in (("X", "assembler"), ("Y", "integrator"), ("Z", "retailer"))}
    for w in wallets.values():
        w.enroll()
    stranger = Wallet.create("end-user", seed=f"fuzz:{seed}:stranger")
    world = World(tracker, wallets, stranger)
    X, Y = wallets["X"], wallets["Y"]

    def enroll(w, n, group):
        out = []
        for _ in range(n):
            uid = f"fuzz-{seed}-{len(world.uids)}"
            world.uids.append(uid)
            out.append(w.enroll_ic(uid, f"MARK {len(world.uids)}", sha256(uid.encode())))
        world.groups.setdefault(group, []).extend(out)
        return out

    def to(w, icids, stage, status):
        for icid in icids:
            w.update_stage(icid, stage, status)

    enroll(X, 3, "fab11")
    to(X, enroll(X, 6, "free21"), 2, 1)
    to(X, enroll(X, 2, "inprog20"), 2, 0)
    to(Y, enroll(Y, 3, "yfree21"), 2, 1)
    for size, name in ((3, "pcb_a"), (2, "pcb_b"), (2, "pcb_c")):
        icids = enroll(X, size, name)
        to(X, icids, 2, 1)
        X.assemble(icids)
        to(X, icids, 3, 0)
        to(X, icids, 3, 1)
        world.groups.setdefault("pcb31", []).extend(icids)
    pcb_d = enroll(X, 2, "pcb_d")
    to(X, pcb_d, 2, 1)
    X.assemble(pcb_d)  # bound at 2/1, not yet integrated
    dev = enroll(X, 2, "device")
    to(X, dev, 2, 1)
    X.assemble(dev)
    to(X, dev, 3, 0)
    to(X, dev, 3, 1)
    X.integrate(dev)
    bad = enroll(X, 2, "defective")
    to(X, bad, 2, 1)
    for icid in bad:
        X.report_defect(icid)
    for stage, status, name in ((3, 0, "s30"), (4, 0, "s40"), (4, 1, "s41")):
        to(X, enroll(X, 1, name), stage, status)
    return world


# mutation helpers

OTHER_FIELDS = ("mark_hash", "key_encr", "key_hash", "owner", "is_defective", "icid_swap",
                "version", "prev_ver", "stage", "status")


def mutate_field(rng: random.Random, world: World, token: ICToken, name: str) -> ICToken:
    m = token.metadata
    if name == "mark_hash":
        return token.with_metadata(mark_hash=rng.randbytes(32))
    if name == "key_encr":
        return token.with_key(key_encr=rng.randbytes(256))
    if name == "key_hash":
        return token.with_key(key_hash=rng.randbytes(32))
    if name == "owner":
        others = [w.public_id for w in world.wallets.values() if w.public_id != token.owner]
        return replace(token, owner=rng.choice(others))
    if name == "is_defective":
        return token.with_metadata(is_defective=not m.is_defective)
    if name == "version":
        return token.with_metadata(version=min(255, m.version + rng.choice((1, 2, 7))),
                                   prev_ver=m.prev_ver if m.prev_ver is not None else 3)
    if name == "prev_ver":
        return token.with_metadata(prev_ver=(m.prev_ver or 0) + rng.randint(1, 5),
                                   version=max(m.version, 1))
    if name == "stage":
        return token.with_metadata(stage=rng.choice([s for s in (1, 2, 3, 4) if s != m.stage]))
    if name == "status":
        return token.with_metadata(status=1 - m.status)
    if name == "icid_swap":
        return token.with_metadata(icid=rng.randbytes(32))
    raise ValueError(name)


def sign(rng: random.Random, world: World, token: ICToken, signer: Wallet, p_bad: float):
    """Sign honestly, or with the wrong key, or flip a signature bit."""
    roll = rng.random()
    if roll < p_bad / 2:
        wrong = rng.choice([w for w in world.wallets.values() if w is not signer] + [world.stranger])
        return wrong.sign_token(token)
    signed = signer.sign_token(token)
    if roll < p_bad:
        sig = bytearray(signed.trnsaxn_id)
        sig[rng.randrange(len(sig))] ^= 1 << rng.randrange(8)
        return replace(signed, trnsaxn_id=bytes(sig))
    return signed


# generators: each returns the submitted token(s)

def enroll_case(rng: random.Random, world: World) -> ICToken:
    signer = rng.choice([*world.wallets.values(), world.stranger] if rng.random() < 0.1
                        else list(world.wallets.values()))
    uid = rng.choice(world.uids) if rng.random() < 0.1 else f"new-{rng.getrandbits(64):016x}"
    token = signer.build_enrollment(uid, f"MK-{rng.getrandbits(16)}", rng.randbytes(32))
    changes = {}
    if rng.random() < 0.15:
        changes["stage"] = rng.choice((2, 3, 4))
    if rng.random() < 0.15:
        changes["status"] = 0
    if rng.random() < 0.12:
        changes["pid"] = rng.randbytes(32)
    if rng.random() < 0.08:
        changes["edid"] = rng.randbytes(32)
        changes.setdefault("pid", rng.randbytes(32))
    if rng.random() < 0.12:
        # the wire format ties prevVer's presence to a nonzero version
        changes["version"] = rng.randint(1, 255)
        changes["prev_ver"] = rng.randint(0, 50)
    if changes:
        token = token.with_metadata(**changes)
    if rng.random() < 0.05:
        token = token.with_metadata(mark_hash=rng.randbytes(32))  # neutral
    return sign(rng, world, token, signer, p_bad=0.1)


def stage_case(rng: random.Random, world: World) -> ICToken:
    icid = rng.choice(world.all_icids)
    prev = world.latest(icid)
    token = prev.with_metadata(stage=rng.randint(1, 4), status=rng.randint(0, 1))
    if rng.random() < 0.2:
        token = mutate_field(rng, world, token, rng.choice(OTHER_FIELDS[:-2]))
    if rng.random() < 0.05:
        token = token.with_metadata(pid=rng.randbytes(32))
    signer = world.wallet_of(prev.owner)
    return sign(rng, world, token, signer, p_bad=0.1)


def _pick_batch(rng, world: World, branch: str) -> list[bytes]:
    g = world.groups
    if branch == "pid":
        pool = g["free21"]
        batch = rng.sample(pool, rng.randint(1, min(4, len(pool))))
    else:
        pcbs = rng.sample(["pcb_a", "pcb_b", "pcb_c"], rng.randint(1, 2))
        batch = [icid for name in pcbs for icid in g[name]]
        if rng.random() < 0.2 and len(batch) > 1:
            batch = rng.sample(batch, len(batch) - 1)  # partial boards are allowed
    if rng.random() < 0.3:
        intruder = rng.choice(world.all_icids + [rng.randbytes(32)])
        if rng.random() < 0.5 and batch:
            batch[rng.randrange(len(batch))] = intruder
        else:
            batch.append(intruder)
    if rng.random() < 0.05 and batch:
        batch.append(rng.choice(batch))
    if rng.random() < 0.02:
        batch = []
    rng.shuffle(batch)
    return batch


def composition_case(rng: random.Random, world: World) -> list[ICToken]:
    branch = rng.choice(("pid", "edid"))
    batch = _pick_batch(rng, world, branch)
    template = world.latest(world.groups["free21"][0])
    prevs = [world.latest(i) if i in world.state.icdb else template.with_metadata(icid=i)
             for i in batch]
    if branch == "pid":
        value = compute_pid(batch) if batch else None
        if rng.random() < 0.15:
            value = rng.choice([rng.randbytes(32), compute_pid(world.groups["free21"])])
        tokens = [p.with_metadata(pid=value) for p in prevs]
        if rng.random() < 0.1 and tokens:
            k = rng.randrange(len(tokens))
            tokens[k] = tokens[k].with_metadata(edid=rng.randbytes(32))
    else:
        pids = list(dict.fromkeys(p.metadata.pid for p in prevs if p.metadata.pid))
        value = compute_edid(pids) if pids else rng.randbytes(32)
        if rng.random() < 0.15:
            value = rng.randbytes(32)
        tokens = [p.with_metadata(edid=value) if p.metadata.pid else
                  p.with_metadata(pid=rng.randbytes(32), edid=value) for p in prevs]
        if rng.random() < 0.08 and tokens:
            k = rng.randrange(len(tokens))
            tokens[k] = tokens[k].with_metadata(pid=rng.randbytes(32))
        if rng.random() < 0.05 and tokens:
            k = rng.randrange(len(tokens))
            tokens[k] = tokens[k].with_metadata(edid=None)
    for k in range(len(tokens)):
        if rng.random() < 0.06:
            tokens[k] = mutate_field(rng, world, tokens[k], rng.choice(OTHER_FIELDS))
    signed = []
    for t, p in zip(tokens, prevs):
        signer = world.wallet_of(p.owner) or world.wallets["X"]
        signed.append(sign(rng, world, t, signer, p_bad=0.04))
    return signed


def transfer_case(rng: random.Random, world: World) -> ICToken:
    icid = rng.choice(world.all_icids)
    prev = world.latest(icid)
    owner_wallet = world.wallet_of(prev.owner)
    candidates = [w for w in world.wallets.values() if w is not owner_wallet]
    to = world.stranger if rng.random() < 0.1 else rng.choice(candidates)
    owner_wallet.held[icid] = prev
    token = owner_wallet.build_transfer(icid, to.profile)
    if rng.random() < 0.08:
        token = token.with_key(key_hash=rng.randbytes(32))
    if rng.random() < 0.15:
        token = mutate_field(rng, world, token, rng.choice(OTHER_FIELDS))
    return sign(rng, world, token, owner_wallet, p_bad=0.1)


# harness

@dataclass
class FuzzResult:
    cases: int = 0
    accepted: int = 0
    counterexamples: list = field(default_factory=list)
    single: dict = field(default_factory=dict)  # assertion -> count of lone violations


def run_fuzz(world: World, algorithm: str, cases: int, seed: int) -> FuzzResult:
    from ictoken.errors import ICTokenError

    import oracle

    generate, service, check = {
        "enroll": (enroll_case, "enroll_ic", oracle.enroll_violations),
        "stage": (stage_case, "update_stage", oracle.stage_violations),
        "composition": (composition_case, "update_pid_or_edid", oracle.composition_violations),
        "transfer": (transfer_case, "transfer_ic", oracle.transfer_violations),
    }[algorithm]
    rng = random.Random(f"precondition-fuzz:{algorithm}:{seed}")
    result = FuzzResult()
    for n in range(cases):
        submitted = generate(rng, world)
        violated = check(world.state, submitted)
        scratch = world.state.copy()
        try:
            getattr(scratch, service)(submitted)
            outcome = None
        except ICTokenError as exc:
            outcome = type(exc).__name__
        result.cases += 1
        if outcome is None:
            result.accepted += 1
        if (outcome is None) != (not violated):
            result.counterexamples.append((n, sorted(violated), outcome))
        elif len(violated) == 1:
            (name,) = violated
            result.single[name] = result.single.get(name, 0) + 1
            if outcome not in oracle.EXPECTED_CLASS[name]:
                result.counterexamples.append((n, [name], outcome))
    return result
