from dataclasses import replace

import pytest

from ictoken.crypto import PublicProfile, sha256
from ictoken.errors import (AlreadyEnrolled, BadSignature, BadVersion, BatchInvalid,
                            CompositionAlreadySet, DefectiveToken, DuplicateICID,
                            IllegalFieldChange, InProgress, KeyTrailBroken, MerkleMismatch,
                            MixedOwners, NewOwnerNotEnrolled, NonEmptyComposition,
                            NotCurrentOwner, OwnerNotEnrolled, ProfileMismatch, ReplayMismatch,
                            StageRollback, StatusRollback, UnknownICID, WrongStage, WrongStatus)
from ictoken.ledger import Block, Transaction, TxKind
from ictoken.token_model import Stage, Status, compute_edid, compute_pid
from ictoken.tracker import Tracker, check_invariants, rebuild_state, verify_chain
from ictoken.wallet import Wallet


@pytest.fixture
def fab(make_wallet):
    return make_wallet("fab")


@pytest.fixture
def asm(make_wallet):
    return make_wallet("asm", "assembler")


def enroll(w, uid="UID-1", key=b"metering-key"):
    return w.enroll_ic(uid, "MARK 1", key)


def at(w, icid, *steps):
    for stage, status in steps:
        w.update_stage(icid, stage, status)


# owners

def test_owner_enrollment(tracker, fab):
    with pytest.raises(AlreadyEnrolled):
        tracker.enroll_owner(fab.profile)
    other = Wallet.create("fab", seed="other")
    with pytest.raises(ProfileMismatch):
        tracker.enroll_owner(PublicProfile(fab.public_id, other.profile.public_key))
    assert tracker.profile(fab.public_id) == fab.profile
    assert tracker.profile(other.public_id) is None


# enrollIC

def test_enroll_fresh_token(tracker, fab):
    icid = enroll(fab)
    t = tracker.latest(icid)
    assert (t.metadata.stage, t.metadata.status, t.metadata.version) == (1, 1, 0)
    assert t.metadata.prev_ver is None
    assert tracker.assets_of(fab.public_id) == {icid}


def test_enroll_clone_rejected(tracker, fab, make_wallet):
    enroll(fab)
    thief = make_wallet("thief")
    with pytest.raises(DuplicateICID):
        enroll(thief)


@pytest.mark.parametrize("changes, error", [
    (dict(version=1, prev_ver=0), BadVersion),
    (dict(stage=Stage.PCB_ASSEMBLY), WrongStage),
    (dict(status=Status.IN_PROGRESS), WrongStatus),
    (dict(pid=sha256(b"p")), NonEmptyComposition),
])
def test_enroll_preconditions(tracker, fab, changes, error):
    token = fab.build_enrollment("UID-X", "M", b"k")
    with pytest.raises(error):
        tracker.enroll_ic(fab.sign_token(token.with_metadata(**changes)))
    assert tracker.state.tokens == []


def test_enroll_signature_checks(tracker, fab):
    stranger = Wallet.create("fab", seed="stranger")
    with pytest.raises(OwnerNotEnrolled):
        tracker.enroll_ic(stranger.build_enrollment("U", "M", b"k"))
    token = fab.build_enrollment("U", "M", b"k")
    with pytest.raises(BadSignature):
        tracker.enroll_ic(stranger.sign_token(token))


# updateStage

def test_stage_update_links_versions(tracker, fab):
    icid = enroll(fab)
    seq = fab.update_stage(icid, 2, 0)
    t = tracker.latest(icid)
    assert (t.metadata.version, t.metadata.prev_ver, seq) == (1, 0, 1)
    assert (t.metadata.stage, t.metadata.status) == (2, 0)


def test_stage_rollbacks(tracker, fab):
    icid = enroll(fab)
    at(fab, icid, (2, 0), (2, 1))
    with pytest.raises(StatusRollback):
        fab.update_stage(icid, 2, 0)
    at(fab, icid, (3, 1))
    with pytest.raises(StageRollback):
        fab.update_stage(icid, 2, 1)


def test_stage_update_cannot_touch_other_fields(tracker, fab):
    icid = enroll(fab)
    token = fab.held[icid].with_metadata(stage=Stage.PCB_ASSEMBLY, mark_hash=sha256(b"x"))
    with pytest.raises(IllegalFieldChange):
        tracker.update_stage(fab.sign_token(token))


def test_stage_update_needs_current_owner(tracker, fab, asm):
    icid = enroll(fab)
    token = fab.held[icid].with_metadata(stage=Stage.PCB_ASSEMBLY)
    with pytest.raises(BadSignature):
        tracker.update_stage(asm.sign_token(token))


def test_stage_update_unknown_ic(tracker, fab):
    icid = enroll(fab)
    token = fab.held[icid].with_metadata(icid=sha256(b"nobody"))
    with pytest.raises(UnknownICID):
        tracker.update_stage(fab.sign_token(token))


# updatePIDorEDID

@pytest.fixture
def board(tracker, fab):
    icids = [enroll(fab, f"B{i}") for i in range(3)]
    for icid in icids:
        at(fab, icid, (2, 0), (2, 1))
    return icids


def test_pid_assignment(tracker, fab, board):
    pid = fab.assemble(board)
    assert pid == compute_pid(board)
    assert tracker.state.pcbdb[pid] == board
    assert all(tracker.latest(i).metadata.pid == pid for i in board)


def test_pid_must_be_the_merkle_root(tracker, fab, board):
    wrong = compute_pid(board[:2])
    tokens = [fab.sign_token(fab.held[i].with_metadata(pid=wrong)) for i in board]
    with pytest.raises(MerkleMismatch):
        tracker.update_pid_or_edid(tokens)


def test_pid_cannot_be_overwritten(tracker, fab, board):
    fab.assemble(board)
    pid = compute_pid(board[:1])
    tokens = [fab.sign_token(fab.held[board[0]].with_metadata(pid=pid))]
    with pytest.raises(CompositionAlreadySet):
        tracker.update_pid_or_edid(tokens)


def test_pid_batch_shape(tracker, fab, board):
    with pytest.raises(BatchInvalid):
        tracker.update_pid_or_edid([])
    t = fab.build_composition_update(board[:1], "pid")
    with pytest.raises(BatchInvalid):
        tracker.update_pid_or_edid(t + t)
    mixed = fab.build_composition_update(board[:2], "pid")
    mixed[1] = fab.sign_token(mixed[1].with_metadata(pid=sha256(b"other")))
    with pytest.raises(BatchInvalid):
        tracker.update_pid_or_edid(mixed)


def test_pid_batch_is_atomic(tracker, fab, board):
    icid = enroll(fab, "late")
    at(fab, icid, (2, 0))
    batch = board + [icid]
    pid = compute_pid(batch)
    tokens = [fab.sign_token(fab.held[i].with_metadata(pid=pid)) for i in batch]
    before = tracker.state.snapshot()
    with pytest.raises(InProgress):
        tracker.update_pid_or_edid(tokens)
    assert tracker.state.snapshot() == before


def test_pid_batch_single_owner(tracker, fab, asm, board):
    fab.transfer(board[2], asm.profile)
    asm.sync_assets()
    pid = compute_pid(board)
    tokens = [fab.sign_token(fab.held[i].with_metadata(pid=pid)) for i in board[:2]]
    tokens.append(asm.sign_token(asm.held[board[2]].with_metadata(pid=pid)))
    with pytest.raises(MixedOwners):
        tracker.update_pid_or_edid(tokens)


def test_edid_assignment_and_checks(tracker, fab, board):
    other = [enroll(fab, "C0"), enroll(fab, "C1")]
    for icid in other:
        at(fab, icid, (2, 0), (2, 1))
    p1, p2 = fab.assemble(board), fab.assemble(other)
    for icid in board + other:
        at(fab, icid, (3, 0), (3, 1))
    batch = board + other
    prevs = [fab.held[i] for i in batch]

    wrong = [fab.sign_token(t.with_metadata(edid=compute_edid([p1]))) for t in prevs]
    with pytest.raises(MerkleMismatch):
        tracker.update_pid_or_edid(wrong)
    moved = [fab.sign_token(t.with_metadata(edid=compute_edid([p1, p2]))) for t in prevs]
    moved[0] = fab.sign_token(prevs[0].with_metadata(pid=sha256(b"x"),
                                                     edid=compute_edid([p1, p2])))
    with pytest.raises(BatchInvalid):
        tracker.update_pid_or_edid(moved)
    half = [fab.sign_token(t.with_metadata(edid=compute_edid([p1, p2]))) for t in prevs]
    half[-1] = fab.sign_token(prevs[-1])
    with pytest.raises(BatchInvalid):
        tracker.update_pid_or_edid(half)

    edid = fab.integrate(batch)
    assert edid == compute_edid([p1, p2])
    assert sorted(tracker.state.devdb[edid]) == sorted([p1, p2])
    again = [fab.sign_token(fab.held[i].with_metadata(edid=compute_edid([p1]))) for i in board]
    with pytest.raises(CompositionAlreadySet):
        tracker.update_pid_or_edid(again)


def test_edid_requires_integration_stage(tracker, fab, board):
    pid = fab.assemble(board)
    edid = compute_edid([pid])
    tokens = [fab.sign_token(fab.held[i].with_metadata(edid=edid)) for i in board]
    with pytest.raises(BatchInvalid):
        tracker.update_pid_or_edid(tokens)


# transferIC

def test_transfer_moves_assets_and_key(tracker, fab, asm):
    icid = enroll(fab, key=b"secret-key")
    fab.transfer(icid, asm.profile)
    asm.sync_assets()
    assert tracker.assets_of(fab.public_id) == set()
    assert tracker.assets_of(asm.public_id) == {icid}
    assert asm.recover_key(icid) == b"secret-key"
    t = tracker.latest(icid)
    assert t.owner == asm.public_id and t.metadata.version == 1


def test_transfer_preconditions(tracker, fab, asm):
    icid = enroll(fab)
    stranger = Wallet.create("fab", seed="stranger")
    with pytest.raises(NewOwnerNotEnrolled):
        fab.transfer(icid, stranger.profile)
    token = fab.build_transfer(icid, asm.profile)
    with pytest.raises(BadSignature):
        tracker.transfer_ic(asm.sign_token(token))
    with pytest.raises(KeyTrailBroken):
        tracker.transfer_ic(fab.sign_token(token.with_key(key_hash=sha256(b"x"))))
    with pytest.raises(IllegalFieldChange):
        tracker.transfer_ic(fab.sign_token(token.with_metadata(mark_hash=sha256(b"x"))))
    at(fab, icid, (2, 0))
    with pytest.raises(InProgress):
        fab.transfer(icid, asm.profile)


# reportDefective

def test_defect_report(tracker, fab, asm):
    icid = enroll(fab)
    token = fab.build_defect_report(icid)
    with pytest.raises(NotCurrentOwner):
        tracker.report_defective(asm.sign_token(replace(token, owner=asm.public_id)))
    with pytest.raises(IllegalFieldChange):
        tracker.report_defective(fab.sign_token(token.with_metadata(stage=Stage.PCB_ASSEMBLY)))
    fab.report_defect(icid)
    assert tracker.latest(icid).metadata.is_defective
    with pytest.raises(DefectiveToken):
        fab.transfer(icid, asm.profile)
    with pytest.raises(DefectiveToken):
        fab.update_stage(icid, 2, 0)


def test_version_counter_exhaustion(tracker, fab, asm):
    icid = enroll(fab)
    wallets = [fab, asm]
    for k in range(255):
        sender, receiver = wallets[k % 2], wallets[(k + 1) % 2]
        sender.transfer(icid, receiver.profile)
        receiver.sync_assets()
    assert tracker.latest(icid).metadata.version == 255
    holder = wallets[255 % 2]
    with pytest.raises(BadVersion):
        holder.transfer(icid, wallets[0].profile)


# history, chain and invariants

def test_trace_history(tracker, fab, asm):
    icid = enroll(fab)
    fab.transfer(icid, asm.profile)
    asm.sync_assets()
    at(asm, icid, (2, 0), (2, 1))
    history = tracker.trace_history(icid)
    assert [t.metadata.version for t in history] == [3, 2, 1, 0]
    assert history[-1].owner == fab.public_id
    with pytest.raises(UnknownICID):
        tracker.trace_history(sha256(b"none"))


def build_flow(capacity=4):
    tracker = Tracker(capacity)
    a = Wallet.create("fab", seed="flow-a", tracker=tracker)
    b = Wallet.create("assembler", seed="flow-b", tracker=tracker)
    a.enroll()
    b.enroll()
    icids = [a.enroll_ic(f"F{i}", "M", b"k%d" % i) for i in range(3)]
    for icid in icids:
        a.transfer(icid, b.profile)
    b.sync_assets()
    for icid in icids:
        at(b, icid, (2, 0), (2, 1))
    b.assemble(icids)
    tracker.flush()
    return tracker, a, b, icids


def test_verify_chain_accepts_honest_ledger():
    tracker, *_ = build_flow()
    report = tracker.verify_chain()
    assert report.ok, report.problems
    assert report.state.snapshot() == tracker.state.snapshot()


def test_verify_chain_detects_header_tampering():
    tracker, *_ = build_flow()
    blocks = list(tracker.ledger.blocks)
    b = blocks[3]
    for forged in (replace(b, index=9), replace(b, prev_hash=sha256(b"x")),
                   replace(b, token_root=sha256(b"x")), replace(b, block_hash=sha256(b"x")),
                   replace(b, txs=b.txs[:1])):
        report = verify_chain(blocks[:3] + [forged] + blocks[4:])
        assert not report.ok and report.first_bad_block == 3
    swapped = blocks[:2] + [blocks[3], blocks[2]] + blocks[4:]
    assert verify_chain(swapped).first_bad_block == 2


def test_verify_chain_replay_catches_resealed_forgery():
    """An attacker who recomputes every hash is still caught by replay."""
    tracker, a, b, icids = build_flow()
    blocks = list(tracker.ledger.blocks)
    k, j = next((i, j) for i, blk in enumerate(blocks)
                for j, tx in enumerate(blk.txs) if tx.kind is TxKind.TRANSFER)
    tx = blocks[k].txs[j]
    forged_token = tx.tokens[0].with_metadata(mark_hash=sha256(b"remarked"))
    forged = list(blocks[k].txs)
    forged[j] = Transaction(tx.kind, (forged_token,))
    chain = blocks[:k]
    prev = chain[-1].block_hash
    for i, blk in enumerate([Block.seal(k, prev, forged)] + blocks[k + 1:], start=k):
        blk = Block.seal(i, prev, blk.txs)
        chain.append(blk)
        prev = blk.block_hash
    report = verify_chain(chain)
    assert not report.ok and report.first_bad_block == k


def test_capacity_enforced_on_verify():
    tracker, *_ = build_flow(capacity=4)
    assert verify_chain(tracker.ledger.blocks, capacity=4).ok
    assert not verify_chain(tracker.ledger.blocks, capacity=1).ok


def test_save_load_round_trip(tmp_path):
    tracker, a, b, icids = build_flow()
    path = tmp_path / "l.jsonl"
    tracker.save(path)
    loaded = Tracker.load(path, 4)
    assert loaded.state.snapshot() == tracker.state.snapshot()
    text = path.read_text()
    path.write_text(text.replace(text.split("\n")[1], text.split("\n")[2], 1))
    with pytest.raises((ReplayMismatch, ValueError)):
        Tracker.load(path, 4)


def test_invariants_hold_and_detect_damage():
    tracker, a, b, icids = build_flow()
    checks = check_invariants(tracker.state, tracker.ledger.blocks)
    assert all(not v for v in checks.values()), checks
    assert rebuild_state(tracker.ledger.blocks).snapshot() == tracker.state.snapshot()
    damaged = tracker.state.copy()
    damaged.owndb[a.public_id].assets.add(icids[0])
    checks = check_invariants(damaged, tracker.ledger.blocks)
    assert checks["asset_partition"] and checks["rebuild"]
