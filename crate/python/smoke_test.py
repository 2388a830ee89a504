"""Smoke test for the Python bindings. Run from the repository root after
`pip install --no-build-isolation -e crates/py`."""

import os
import sys

import tabweave

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA = os.path.join(ROOT, "crates", "core", "tests", "data")
TABLE = os.path.join(DATA, "New_York_Americans_soccer.csv")
TRANSCRIPT = os.path.join(DATA, "soccer_transcript.json")
QUESTION = "How long did it take for the New York Americans to win the National Cup after 1936?"


def main():
    result = tabweave.answer_question(TABLE, QUESTION, "scripted:" + TRANSCRIPT)
    assert result["answer"] == "17 years", result
    assert result["final_table"] == "first_win_after_1936", result
    assert len(result["calls"]) == 7, result["calls"]
    assert result["stats"]["sql_merges"] == 1, result["stats"]

    plan = (
        "Step_1 - SQL:\nCREATE TABLE f AS SELECT * FROM t WHERE column = 'X';\n\n"
        "Step_2 - SQL:\nCREATE TABLE s AS SELECT * FROM f ORDER BY date DESC;\n"
    )
    text, stats = tabweave.optimize_plan(plan, "t")
    assert "WHERE column = 'X' ORDER BY date DESC" in text, text
    assert (stats["steps_before"], stats["steps_after"]) == (2, 1), stats
    assert tabweave.normalize_plan(text, "t") == text

    assert tabweave.exact_match(" 17  Years", "17 years")
    assert tabweave.relaxed_exact_match("0", "5") == "mismatch"

    code, out, _ = tabweave.run_cli(
        ["run", "--table", TABLE, "--question", QUESTION, "--backend", "scripted:" + TRANSCRIPT]
    )
    assert (code, out) == (0, "17 years\n"), (code, out)
    code, _, err = tabweave.run_cli(["run", "--bogus"])
    assert code == 1 and "Usage" in err

    try:
        tabweave.answer_question(TABLE, QUESTION, "mock")
    except ValueError:
        pass
    else:
        raise AssertionError("bad backend spec accepted")

    print("python smoke test: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
