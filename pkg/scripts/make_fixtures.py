"""Regenerate the frozen fixtures under src/tablerag/data/golden/.

Each record is described by a plan: the decomposer's moves, the SQL to emit if (and only
if) the loop asks for SQL, the intermediate answers, and the judge replies. The plan is
played against the real pipeline over the mini corpus and the responses actually consumed
are written out as scripted transcripts; the golden trace is frozen alongside.

    python scripts/make_fixtures.py
"""

from __future__ import annotations

import json
import sys

from tablerag import DATA_DIR
from tablerag.corpus import load_corpus_dir
from tablerag.llm import TOOL_NAME, Gateway, ScriptStep, classify_prompt, dump_transcript
from tablerag.pipeline import in_memory_reasoner

GOLDEN = DATA_DIR / "golden"
FILMS = "List_of_Australian_films_of_2012_0"

GOLDEN_QUESTION = (
    "Who wrote and starred the comedy film released in the second half of 2012 (July-December) "
    "that had the highest number of cast members in the List of Australian films of 2012?"
)
GOLDEN_SQL = f"""SELECT Title FROM {FILMS}
WHERE Genre LIKE '%comedy%' AND Release_date BETWEEN '2012-07-01' AND '2012-12-31'
ORDER BY LENGTH("Cast") - LENGTH(REPLACE("Cast", ',', '')) + 1 DESC
LIMIT 1"""

GOLDEN_PLAN = [
    ("sub", "Which comedy film released in the second half of 2012 (July-December) had the highest "
            "number of cast members in the List of Australian films of 2012?",
     GOLDEN_SQL,
     "Kath & Kimderella. The SQL result and the table agree: it lists six cast members, more than "
     "any other comedy released between July and December 2012."),
    ("sub", "Who wrote and starred in the film Kath & Kimderella?", None,
     "Kath & Kimderella was written by and stars Gina Riley, Jane Turner and Magda Szubanski."),
    ("final", "The comedy is Kath & Kimderella, written by and starring its three leads.\n"
              "<Answer>: Riley, Turner, and Magda Szubanski"),
]

ADVERSARIAL_SUB = ("sub", "List the comedy films in the List of Australian films of 2012.",
                   f"SELECT Title FROM {FILMS} WHERE Genre LIKE '%comedy%'",
                   "The comedies are A Few Best Men, Any Questions for Ben?, Not Suitable for Children, "
                   "The Sapphires, Kath & Kimderella, The King Is Dead!, Mental and Save Your Legs!.")

RECORDS = [
    dict(id="r01", question=GOLDEN_QUESTION, answer="Riley, Turner, and Magda Szubanski",
         table="List_of_Australian_films_of_2012.md", docs=["Kath_and_Kimderella.md"],
         sql_query=GOLDEN_PLAN[0][1], sql=GOLDEN_SQL, sql_ans="Kath & Kimderella",
         plan=GOLDEN_PLAN, judge=["Rating: [[1]]"]),
    dict(id="r02", question=GOLDEN_PLAN[0][1], answer="Kath & Kimderella",
         table="List_of_Australian_films_of_2012.md", docs=[],
         plan=[GOLDEN_PLAN[0], ("final", "<Answer>: Kath & Kimderella")], judge=["Rating: [[1]]"]),
    dict(id="r03", question="How many films in the List of Australian films of 2012 have the genre Drama?",
         answer="2", table="List_of_Australian_films_of_2012.md", docs=[],
         plan=[("sub", "How many films in the List of Australian films of 2012 have the genre Drama?",
                f"SELECT COUNT(*) FROM {FILMS} WHERE Genre = 'Drama'",
                "Two films (Dead Europe and Satellite Boy) are listed with the genre Drama."),
               ("final", "<Answer>: 2")],
         judge=["Rating: [[1]]"]),
    dict(id="r04", question="What was the gross in AUD of The Sapphires according to box office 2012?",
         answer="14,500,000 AUD", table="box_office_2012.csv", docs=[],
         plan=[("sub", "What was the gross in AUD of The Sapphires according to box office 2012?",
                "SELECT Gross__AUD_ FROM box_office_2012 WHERE Title = 'The Sapphires'",
                "The Sapphires grossed 14500000 AUD."),
               ("final", "<Answer>: [14,500,000 AUD]")],
         judge=["Rating: [[1]]"]),
    dict(id="r05", question="Who directed Bait 3D in the List of Australian films of 2012?",
         answer="Kimble Rendall", table="List_of_Australian_films_of_2012.md", docs=[],
         plan=[("sub", "Who directed Bait 3D in the List of Australian films of 2012?",
                f"SELECT Director FROM {FILMS} WHERE",
                "The SQL failed; judging from Content 1 the director appears to be Stephan Elliott."),
               ("final", "<Answer>: Stephan Elliott")],
         judge=["Rating: [[0]]"]),
    dict(id="r06", question="Which comedies in the List of Australian films of 2012 keep changing?",
         answer="None", table="List_of_Australian_films_of_2012.md", docs=[],
         plan=[ADVERSARIAL_SUB] * 6, judge=[]),
    dict(id="r07", question="Where was the comedy-drama directed by P. J. Hogan shot?",
         answer="The Gold Coast in Queensland", table="List_of_Australian_films_of_2012.md",
         docs=["Mental_film.md"],
         plan=[("bad", "I am not sure how to approach this."), ("bad", "I cannot answer this question.")],
         judge=[]),
    dict(id="r08", question="Which film in the List of Australian films of 2012 was released last?",
         answer="Save Your Legs!", table="List_of_Australian_films_of_2012.md", docs=[],
         plan=[("sub", "Which film in the List of Australian films of 2012 was released last?",
                f"SELECT Title FROM {FILMS} ORDER BY Release_date DESC LIMIT 1",
                "Save Your Legs! was released last, on 2012-12-06."),
               ("final", "<Answer>: Satellite Boy")],
         judge=["Rating: [[0]]"]),
    dict(id="r09", question="Who directed the last comedy released in the List of Australian films of 2012?",
         answer="Boyd Hicklin", table="List_of_Australian_films_of_2012.md", docs=[],
         plan=[("sub", "Which comedy films in the List of Australian films of 2012 were released after June 2012?",
                f"SELECT Title FROM {FILMS} WHERE Genre LIKE '%comedy%' AND Release_date > '2012-06-30'",
                "Not Suitable for Children, The Sapphires, Kath & Kimderella, The King Is Dead!, Mental, Save Your Legs!."),
               ("sub", "Which comedy film in the List of Australian films of 2012 has the latest release date?",
                f"SELECT Title FROM {FILMS} WHERE Genre LIKE '%comedy%' ORDER BY Release_date DESC LIMIT 1",
                "Save Your Legs! (released 2012-12-06)."),
               ("sub", "Who is the director of Save Your Legs! in the List of Australian films of 2012?",
                f"SELECT Director FROM {FILMS} WHERE Title = 'Save Your Legs!'",
                "Boyd Hicklin directed Save Your Legs!."),
               ("final", "<Answer>: Boyd Hicklin")],
         judge=["I think it is correct.", "Rating: [[1]]"]),
    dict(id="r10", question="Which character is played in Kath & Kim by the Kath & Kimderella co-writer best known for Babe?",
         answer="Sharon Strzelecki", table="List_of_Australian_films_of_2012.md", docs=["Magda_Szubanski.md"],
         plan=[("sub", "Who wrote and starred in the film Kath & Kimderella?", None, "Gina Riley, Jane Turner and Magda Szubanski."),
               ("sub", "Which of Gina Riley, Jane Turner and Magda Szubanski is known for Babe?", None,
                "Magda Szubanski, who played Esme Hoggett in Babe."),
               ("sub", "Which character does Magda Szubanski play in Kath & Kim?", None, "Sharon Strzelecki."),
               ("sub", "Is Sharon Strzelecki the best friend of Kim in Kath & Kim?", None, "Yes."),
               ("sub", "Did Magda Szubanski star in the film Kath & Kimderella?", None, "Yes, she co-wrote and starred in it."),
               ("final", "<Answer>: Sharon Strzelecki")],
         judge=["The answer looks right.", "Still looks right to me."]),
]


class PlanProvider:
    """Answers prompts from a plan and records the steps consumed."""

    def __init__(self, plan, judge, record=None):
        self.moves = list(plan)
        self.judge = list(judge)
        self.record = record
        self.current = None
        self.steps: list[ScriptStep] = []

    def complete(self, config, messages, tools):
        kind = classify_prompt(messages)
        if kind == "decompose":
            move = self.moves.pop(0)
            if move[0] == "sub":
                self.current = move
                step = ScriptStep(kind, tool_call={"subquery": move[1]}, record=self.record)
            else:
                step = ScriptStep(kind, content=move[1], record=self.record)
        elif kind == "nl2sql":
            if self.current[2] is None:
                raise RuntimeError(f"plan has no SQL for {self.current[1]!r}")
            step = ScriptStep(kind, content=f"```sql\n{self.current[2]}\n```", record=self.record)
        elif kind == "compose":
            step = ScriptStep(kind, content=self.current[3], record=self.record)
        else:
            step = ScriptStep(kind, content=self.judge.pop(0), record=self.record)
        self.steps.append(step)
        message = {"role": "assistant", "content": step.content or None}
        if step.tool_call is not None:
            message["tool_calls"] = [{"id": f"call_{len(self.steps)}", "type": "function",
                                      "function": {"name": TOOL_NAME, "arguments": json.dumps(step.tool_call)}}]
        return {"choices": [{"message": message}]}


def main() -> int:
    from tablerag.evaluation import judge

    docs, tables = load_corpus_dir(DATA_DIR / "mini_corpus")
    reasoner, db = in_memory_reasoner(docs, csv_tables=tables)
    GOLDEN.mkdir(exist_ok=True)

    provider = PlanProvider(GOLDEN_PLAN, [])
    trace = reasoner.run(GOLDEN_QUESTION, Gateway(provider))
    dump_transcript(provider.steps, GOLDEN / "australian_films.jsonl")
    (GOLDEN / "australian_films.trace.json").write_text(trace.to_json(timings=False) + "\n", encoding="utf-8")
    print("golden:", trace.status, trace.final_answer)

    all_steps = []
    with open(GOLDEN / "eval_dataset.jsonl", "w", encoding="utf-8") as fh:
        for rec in RECORDS:
            provider = PlanProvider(rec["plan"], rec["judge"], rec["id"])
            t = reasoner.run(rec["question"], Gateway(provider))
            predicted = t.final_answer if t.status == "answered" else "[UNANSWERED]"
            verdict = judge(rec["question"], rec["answer"], predicted, Gateway(provider))
            unused = [m for m in provider.moves if m]
            print(rec["id"], t.status, len(t.iterations), repr(t.final_answer), verdict.score,
                  "unused moves" if unused else "")
            all_steps.extend(provider.steps)
            row = {k: rec[k] for k in ("id", "question", "answer", "table", "docs")}
            row.update({k: rec[k] for k in ("sql_query", "sql", "sql_ans") if k in rec})
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    dump_transcript(all_steps, GOLDEN / "eval_transcript.jsonl")
    db.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
