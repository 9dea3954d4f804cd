import pytest

from cfvm.code import (
    ALLOCATE, CF_CALL, FAIL, JUMP, PROCEED, WIDTH, CodeBlock, Emitter, Label, QueryInfo,
    disassemble,
)
from cfvm.syntax import Int
from cfvm.terms import CODE, IMM, LABEL, OP, Arena, ContractError, intern_term, validate


def block(ar):
    return CodeBlock(ar, "test", QueryInfo(None))


def stub_block():
    """A block whose last instruction (a fail) stands in for a stub."""
    ar = Arena()
    b = block(ar)
    e = Emitter()
    e.emit(ALLOCATE, (IMM, 2))
    e.emit(FAIL)
    b.entry, _ = e.place(b)
    return ar, b, b.entry + WIDTH


def test_instructions_are_fixed_width():
    ar, b, _ = stub_block()
    assert ar.region_of(b.entry) == (b.entry, 2 * WIDTH, CODE)
    assert [ar.tags[i] for i in range(b.entry, ar.top, WIDTH)] == [OP, OP]


def test_stub_at_top_extends_in_place():
    ar, b, site = stub_block()
    e = Emitter()
    e.emit(PROCEED)
    e.emit(PROCEED)
    e.emit(PROCEED)
    addr, stitched = e.place(b, site)
    assert addr == site and not stitched
    assert len(ar.regions()) == 1 and ar.top == site + 3 * WIDTH
    assert b.opcodes() == ["allocate", "proceed", "proceed", "proceed"]


def test_single_instruction_overwrites_stub():
    ar, b, site = stub_block()
    intern_term(ar, Int(1))  # a term now sits above the stub
    e = Emitter()
    e.emit(PROCEED)
    addr, stitched = e.place(b, site)
    assert not stitched and ar.vals[site] == PROCEED


def test_noncontiguous_expansion_is_stitched():
    ar, b, site = stub_block()
    intern_term(ar, Int(1))
    e = Emitter()
    e.emit(PROCEED)
    e.emit(PROCEED)
    addr, stitched = e.place(b, site)
    assert stitched and ar.vals[site] == JUMP
    target = ar.vals[site + 1]
    assert ar.tags[site + 1] == LABEL and ar.vals[target] == PROCEED
    assert len(b.regions) == 2
    assert validate(ar) == []


def test_cont_dropped_when_label_follows():
    ar = Arena()
    b = block(ar)
    e = Emitter()
    L = Label()
    e.emit(ALLOCATE, (IMM, 2))
    e.cont(L)
    e.bind(L)
    e.emit(PROCEED)
    b.entry, _ = e.place(b)
    assert b.opcodes() == ["allocate", "proceed"]


def test_cont_becomes_jump_otherwise():
    ar = Arena()
    b = block(ar)
    e = Emitter()
    L = Label()
    e.emit(ALLOCATE, (IMM, 2))
    e.cont(L)
    e.emit(FAIL)
    e.bind(L)
    e.emit(PROCEED)
    b.entry, _ = e.place(b)
    assert disassemble(b) == ["allocate 2", "jump L1", "fail", "L1: proceed"]


def test_unbound_label_rejected():
    ar = Arena()
    e = Emitter()
    e.emit(JUMP, (LABEL, Label()))
    with pytest.raises(ContractError):
        e.place(block(ar))


def test_empty_sequence_rejected():
    with pytest.raises(ContractError):
        Emitter().place(block(Arena()))
