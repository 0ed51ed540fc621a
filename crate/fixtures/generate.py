"""Regenerates the bundled fixture data. Output is deterministic."""
import datetime as dt
import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent


def weekdays(start, n, skip=()):
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5 and d not in skip:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def walk(rng, n, start_open, vol, decimals, fixed_first_open=None):
    rows, prev_close = [], start_open
    for i in range(n):
        o = prev_close * (1 + rng.gauss(0, vol / 4))
        if fixed_first_open is not None and i == fixed_first_open[0]:
            o = fixed_first_open[1]
        c = o * (1 + rng.gauss(0.0005, vol))
        h = max(o, c) * (1 + abs(rng.gauss(0, vol / 2)))
        l = min(o, c) * (1 - abs(rng.gauss(0, vol / 2)))
        o, c, h, l = (round(x, decimals) for x in (o, c, h, l))
        h, l = max(h, o, c), min(l, o, c)
        v = round(abs(rng.gauss(1e6, 2e5)))
        rows.append((o, h, l, c, v))
        prev_close = c
    return rows


def write_bars(path, series):
    lines = ["symbol,ts,open,high,low,close,volume"]
    for sym, stamps, rows in series:
        for ts, (o, h, l, c, v) in zip(stamps, rows):
            lines.append(f"{sym},{ts},{o},{h},{l},{c},{v}")
    path.write_text("\n".join(lines) + "\n")


def iso(d, hh, mm):
    return f"{d.isoformat()}T{hh:02d}:{mm:02d}:00Z"


def corpus(rng, path, symbols, start, days, prefix):
    topics = ["earnings", "guidance", "upgrade", "downgrade", "supply", "demand",
              "regulation", "buyback", "product", "lawsuit"]
    lines = []
    for i in range(days * 2):
        day = start + dt.timedelta(hours=12 * i + rng.randrange(0, 11))
        sym = rng.choice(symbols)
        topic = rng.choice(topics)
        tags = [sym] if rng.random() < 0.85 else []
        item = {
            "id": f"{prefix}-news-{i:03d}",
            "published_at": day.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "symbols": tags,
            "summary": f"{sym} {topic} update number {i}",
            "sentiment": round(rng.uniform(-1, 1), 2) if rng.random() < 0.8 else None,
        }
        lines.append(json.dumps(item))
    for i in range(days):
        day = start + dt.timedelta(hours=24 * i + rng.randrange(0, 23))
        sym = rng.choice(symbols)
        topic = rng.choice(topics)
        doc = {
            "id": f"{prefix}-doc-{i:03d}",
            "ts": day.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "title": f"{sym} {topic} report",
            "body": f"Analysts discuss {topic} for {sym}; market {rng.choice(topics)} outlook.",
            "source": rng.choice(["wire", "filing", "analyst", "blog"]),
            "ignored_field": i,
        }
        lines.append(json.dumps(doc))
    path.write_text("\n".join(lines) + "\n")


def us():
    rng = random.Random(7)
    out = ROOT / "us"
    syms = ["QQQ", "AAPL", "MSFT", "NVDA", "AMZN"]
    (out / "universe.txt").write_text(
        "# US fixture universe (baseline QQQ included so it can be held)\n"
        + "\n".join(syms + ["NEWCO  # listed mid-run"]) + "\n")
    days = weekdays(dt.date(2025, 9, 30), 31)
    stamps = [iso(d, 14, 30) for d in days]
    starts = {"QQQ": 495.0, "AAPL": 255.0, "MSFT": 515.0, "NVDA": 186.0, "AMZN": 220.0}
    series = []
    for s in syms:
        fixed = (1, 500.0) if s == "QQQ" else None
        series.append((s, stamps, walk(rng, 31, starts[s], 0.012, 2, fixed)))
    series.append(("NEWCO", stamps[11:], walk(rng, 20, 40.0, 0.03, 2)))
    write_bars(out / "bars_daily.csv", series)

    hdays = weekdays(dt.date(2025, 10, 1), 5)
    hstamps = [iso(d, 14 + k, 30) for d in hdays for k in range(7)]
    seed = [iso(dt.date(2025, 9, 30), 20, 30)]
    hseries = [(s, seed + hstamps, walk(rng, 36, starts[s], 0.004, 2)) for s in ["QQQ", "AAPL", "MSFT"]]
    write_bars(out / "bars_hourly.csv", hseries)
    corpus(rng, out / "corpus.jsonl", syms, dt.datetime(2025, 9, 20), 60, "us")


def ashare():
    rng = random.Random(11)
    out = ROOT / "ashare"
    codes = """600519 601318 600036 601166 600900 600276 601012 600030 601398 601288
601988 601857 600028 601628 601601 600309 600887 601888 603259 600104
601668 601390 601186 600050 601899 600031 601088 600585 600690 601919
603288 600809 601633 600048 601225 600436 603501 688981 688111 600010
601138 600745 601211 601688 600406 601066 600150 601728 603986 600438""".split()
    assert len(codes) == 50 and len(set(codes)) == 50
    (out / "sse50.txt").write_text("# SSE-50 style fixture, 50 constituents\n"
                                   + "\n".join(c + ".SH" for c in codes) + "\n")
    trade = ["510050.SH", "600519.SH", "601318.SH", "600036.SH"]
    (out / "universe.txt").write_text("\n".join(trade) + "\n")
    holidays = [dt.date(2025, 10, d) for d in range(1, 9)]
    (out / "calendar.cfg").write_text(
        "# Shanghai regular sessions, fixed UTC+8\n"
        "continuous = false\n"
        "session = MON-FRI 09:30-11:30 UTC+8\n"
        "session = MON-FRI 13:00-15:00 UTC+8\n"
        "holidays = " + ", ".join(d.isoformat() for d in holidays) + "\n")
    days = weekdays(dt.date(2025, 9, 30), 31, skip=set(holidays))
    stamps = [iso(d - dt.timedelta(days=0), 1, 30) for d in days]
    starts = {"510050.SH": 3.1, "600519.SH": 1450.0, "601318.SH": 55.0, "600036.SH": 42.0}
    write_bars(out / "bars_daily.csv",
               [(s, stamps, walk(rng, 31, starts[s], 0.01, 2)) for s in trade])
    corpus(rng, out / "corpus.jsonl", trade, dt.datetime(2025, 9, 25), 50, "cn")


def crypto():
    rng = random.Random(13)
    out = ROOT / "crypto"
    pairs = [f"{c}-USDT" for c in "BTC ETH XRP SOL ADA SUI LINK AVAX LTC DOT".split()]
    (out / "universe.txt").write_text("# Ten USDT pairs\n" + "\n".join(pairs) + "\n")
    days = [dt.date(2025, 10, 31) + dt.timedelta(days=i) for i in range(31)]
    stamps = [iso(d, 0, 0) for d in days]
    starts = [110000, 3900, 2.5, 185, 0.6, 2.4, 17, 18, 95, 3.0]
    series = [(p, stamps, walk(rng, 31, s, 0.03, 6)) for p, s in zip(pairs, starts)]
    series.append(("CD5", stamps, walk(rng, 31, 4200.0, 0.025, 4)))
    write_bars(out / "bars_daily.csv", series)
    corpus(rng, out / "corpus.jsonl", pairs, dt.datetime(2025, 10, 25), 45, "cx")


if __name__ == "__main__":
    us()
    ashare()
    crypto()
