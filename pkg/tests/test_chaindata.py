import io
import json

import pytest

from helpers import block, coinbase, simple_block, spend, tx, txid
from poolscope.chaindata import (
    ZERO_TXID,
    block_to_record,
    btc,
    build_index,
    dump_block,
    iter_blocks,
    load_chain,
    parse_range,
    validate_block,
    write_chain,
)
from poolscope.errors import (
    BadCoinbaseInput,
    DuplicateTxid,
    MalformedRecord,
    MissingCoinbase,
    NegativeFee,
    NegativeValue,
    NonContiguousHeights,
)


def good_record(height=0, value=5000):
    return {
        "height": height,
        "time": 1231006505,
        "coinbase_hex": b"/hello/".hex(),
        "txs": [{"txid": txid(f"cb{height}"), "coinbase": True,
                 "ins": [{"prev": ZERO_TXID, "vout": 4294967295, "addr": None, "value": 0}],
                 "outs": [{"addr": "A", "value": value}]}],
    }


def write_lines(tmp_path, records, name="chain.jsonl"):
    p = tmp_path / name
    p.write_text("".join(json.dumps(r) + "\n" for r in records))
    return p


def test_empty_file_gives_empty_chain(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    blocks, index = load_chain(p)
    assert blocks == []
    assert index.tx_by_id == {} and index.received_by == {}


def test_three_coinbase_blocks(tmp_path):
    p = write_lines(tmp_path, [good_record(h) for h in range(3)])
    blocks, index = load_chain(p)
    assert [b.height for b in blocks] == [0, 1, 2]
    assert len(index.received_by["A"]) == 3
    assert index.received_total("A") == 15000


def test_gap_in_heights(tmp_path):
    p = write_lines(tmp_path, [good_record(5), good_record(7)])
    with pytest.raises(NonContiguousHeights) as e:
        load_chain(p)
    assert (e.value.expected, e.value.found) == (6, 7)


def test_negative_output():
    r = good_record(value=-1)
    with pytest.raises(NegativeValue):
        validate_block(r)


def test_coinbase_without_null_prev():
    r = good_record()
    r["txs"][0]["ins"][0]["prev"] = txid("x")
    with pytest.raises(BadCoinbaseInput):
        validate_block(r)


def test_well_formed_record():
    b = validate_block(good_record(3))
    assert b.height == 3
    assert b.txs[0].is_coinbase
    assert b.coinbase_bytes == b"/hello/"
    assert b.coinbase_value == 5000


def test_missing_coinbase():
    r = good_record()
    r["txs"][0]["coinbase"] = False
    with pytest.raises(MissingCoinbase):
        validate_block(r)


def test_second_coinbase_rejected():
    r = good_record()
    r["txs"].append(dict(r["txs"][0], txid=txid("other")))
    with pytest.raises(BadCoinbaseInput):
        validate_block(r)


def test_outputs_exceeding_inputs():
    r = good_record()
    r["txs"].append({"txid": txid("t"), "ins": [{"prev": txid("p"), "vout": 0, "addr": "A", "value": 10}],
                     "outs": [{"addr": "B", "value": 11}]})
    with pytest.raises(NegativeFee):
        validate_block(r)


@pytest.mark.parametrize("mutate", [
    lambda r: r.pop("time"),
    lambda r: r.update(height="7"),
    lambda r: r.update(coinbase_hex="zz"),
    lambda r: r["txs"][0].update(txid="ABC"),
    lambda r: r["txs"][0]["outs"][0].update(value=1.5),
])
def test_malformed_records(mutate):
    r = good_record()
    mutate(r)
    with pytest.raises(MalformedRecord):
        validate_block(r)


def test_line_number_reported(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps(good_record(0)) + "\n{not json\n")
    with pytest.raises(MalformedRecord) as e:
        load_chain(p)
    assert e.value.line_no == 2


def test_duplicate_txid():
    cb = coinbase([("A", 1)], "same")
    with pytest.raises(DuplicateTxid):
        build_index([block(0, [cb]), block(1, [cb])])


def test_height_range_is_half_open(tmp_path):
    p = write_lines(tmp_path, [good_record(h) for h in range(10)])
    blocks, _ = load_chain(p, (3, 6))
    assert [b.height for b in blocks] == [3, 4, 5]
    blocks, _ = load_chain(p, parse_range("8:"))
    assert [b.height for b in blocks] == [8, 9]


def test_parse_range():
    assert parse_range("510000:514032") == (510000, 514032)
    assert parse_range(":5") == (None, 5)
    assert parse_range(None) is None
    with pytest.raises(ValueError):
        parse_range("5:5")
    with pytest.raises(ValueError):
        parse_range("12")


def test_index_links_spends():
    cb = coinbase([("R", 1000)], "cb-link")
    t1 = tx([(cb.txid, 0, "R", 1000)], [("X", 600), ("Y", 390)], "t1")
    t2 = tx([(t1.txid, 0, "X", 600), (t1.txid, 1, "Y", 390)], [("Z", 980)], "t2")
    index = build_index([block(0, [cb, t1]), block(1, [coinbase([("R", 5)], "cb2"), t2])])
    assert index.spender[(cb.txid, 0)] == t1.txid
    assert index.spender[(t1.txid, 1)] == t2.txid
    assert index.spent_by["R"] == [t1.txid]
    assert index.spent_by["X"] == [t2.txid] and index.spent_by["Y"] == [t2.txid]
    assert index.height_of(t2.txid) == 1
    assert index.tx_order[t1.txid] < index.tx_order[t2.txid]
    assert t1.fee == 10 and t2.fee == 10


def test_round_trip(tmp_path):
    extra = spend(["A", "B"], [("C", 150), (None, 40)])
    blocks = [simple_block(0, "A", b"/x/"), simple_block(1, "B", b"\x00\xff", extra=[extra])]
    p = tmp_path / "rt.jsonl"
    write_chain(blocks, p)
    again, _ = load_chain(p)
    assert again == blocks
    buf = io.StringIO()
    write_chain(again, buf)
    assert buf.getvalue() == p.read_text()
    assert json.loads(dump_block(blocks[1])) == block_to_record(blocks[1])


def test_btc_formatting():
    assert btc(0) == "0.00000000"
    assert btc(1_250_000_000) == "12.50000000"
    assert btc(1) == "0.00000001"
    assert btc(-150_000_000) == "-1.50000000"


def test_iter_blocks_skips_blank_lines():
    lines = ["", json.dumps(good_record(0)), "   ", json.dumps(good_record(1))]
    assert [b.height for b in iter_blocks(lines)] == [0, 1]
