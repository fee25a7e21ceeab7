"""Prompt builders. Each system message starts with a sentinel line naming its kind."""

from __future__ import annotations

import json
import re

from .corpus import TableSchema
from .llm import SENTINEL_PREFIX, ChatMessage
from .tablestore import DIALECT

ANSWER_MARKER = "<Answer>:"
NO_EVIDENCE = "No evidence retrieved for this subquery."
TEXT_RETRIEVAL_DISABLED = "(textual retrieval disabled)"

DECOMPOSE_INSTRUCTIONS = """\
Next, You will complete a table-related question answering task. Based on the provided materials such as the table content (in Markdown format), you need to analyze the Question. And try to decide whether the Question should be broken down into subquerys. After you have collected sufficient information, you need to generate comprehensive answers.
You have a "solve_subquery" tool that can execute SQL-like operations on the table data. It accepts natural language questions as input.

Instructions:
1. Carefully analyze the user query through step-by-step reasoning.
2. If the query requires multiple pieces of information, more than the given table content:
   - Decompose the query into subqueries
   - Process one subquery at a time
   - Use "solve_subquery" tool to retrieve answers for each subquery
3. If a query can be answered by table content, do not decompose it. And directly put the origin query into the "solve_subquery" tool.
   The "solve_subquery" tool can solve complex subquery on table via one tool call.
4. Generate exactly ONE subquery at a time.
5. Write out all terms completely - avoid using abbreviations.
6. When you have sufficient information, provide the final answer in this format:
   <Answer>: [your complete response]"""

FORMAT_REMINDER = (
    "Your last reply neither called the \"solve_subquery\" tool nor gave a final answer. "
    "Either call \"solve_subquery\" with ONE subquery, or reply with:\n"
    "<Answer>: [your complete response]"
)

NL2SQL_INSTRUCTIONS = f"""\
You translate a question into SQL over the tables described below.
Dialect: {DIALECT}.
Write exactly one SQL SELECT statement that answers the question. Use only the listed tables and columns, quoting identifiers with double quotes when needed.
Return the statement inside a ```sql code block and nothing else."""

COMPOSE_TEMPLATE = """\
You are about to complete a table-based question answering task using the following two types of reference materials:

# Content 1: Original content (table content is provided in Markdown format)
{docs}

# Content 2: NL2SQL related information and SQL execution results in the database
# the user given table schema
{schema}

# SQL generated based on the schema and the user question:
{sql}

# SQL execution results
{result}

Please answer the user's question based on the materials above.
User question: {query}

Note:
1. The markdown table content in Content 1 may be not complete.
2. You should cross-validate the given two materials:
   - if the answers are same, you may directly output the answer.
   - If the SQL shows error, such as "SQL execution results", try to answer solely based on Content 1.
   - If the two material shows conflict, carefully evaluate both sources, explain the discrepancy, and provide your best assessment."""

# Used when SQL was not run (no table schema matched, or SQL disabled).
COMPOSE_TEXT_ONLY_TEMPLATE = """\
You are about to complete a table-based question answering task using the following reference material:

# Content 1: Original content (table content is provided in Markdown format)
{docs}

Please answer the user's question based on the material above.
User question: {query}

Note:
1. The markdown table content in Content 1 may be not complete.
2. Answer from Content 1 only; if it is insufficient, say so."""

JUDGE_TEMPLATE = """\
We would like to request your feedback on the performance of the AI assistant in response to the user question displayed above according to the gold answer. Please use the following listed aspects and their descriptions as evaluation criteria:
    - Accuracy and Hallucinations: The assistant's answer is semantically consistent with the gold answer; The numerical value and order need to be accurate, and there should be no hallucinations.
    - Completeness: Referring to the reference answers, the assistant's answer should contain all the key points needed to answer the user's question; further elaboration on these key points can be omitted.
Please rate whether this answer is suitable for the question. Please note that the gold answer can be considered as a correct answer to the question.

The assistant receives an overall score on a scale of 0 OR 1, where 0 means wrong and 1 means correct.
Dirctly output a line indicating the score of the Assistant.

PLEASE OUTPUT WITH THE FOLLOWING FORMAT, WHERE THE SCORE IS 0 OR 1 BY STRICTLY FOLLOWING THIS FORMAT: "[[score]]", FOR EXAMPLE "Rating: [[1]]":
<start output>
Rating: [[score]]
<end output>"""

JUDGE_MATERIALS = """\
[Question]
{question}

[Gold Answer]
{gold}

[The Start of Assistant's Predicted Answer]
{predicted}"""

JUDGE_REMINDER = 'Reply with exactly one line of the form "Rating: [[0]]" or "Rating: [[1]]".'


def _system(kind: str, body: str) -> ChatMessage:
    return ChatMessage("system", f"{SENTINEL_PREFIX} {kind}\n{body}")


def schema_block(schemas: list[TableSchema]) -> str:
    return "\n".join(json.dumps(s.to_dict(), ensure_ascii=False) for s in schemas)


def decompose_messages(query: str, table_content: str, schema: TableSchema | None) -> list[ChatMessage]:
    content = table_content
    if schema is not None:
        content += "\nTable Schema: " + json.dumps(schema.to_dict(), ensure_ascii=False)
    user = f"Table Content: {content}\nQuestion: {query}\nPlease start!"
    return [_system("decompose", DECOMPOSE_INSTRUCTIONS), ChatMessage("user", user)]


def nl2sql_messages(subquery: str, schemas: list[TableSchema]) -> list[ChatMessage]:
    user = f"Table schemas:\n{schema_block(schemas)}\n\nQuestion: {subquery}"
    return [_system("nl2sql", NL2SQL_INSTRUCTIONS), ChatMessage("user", user)]


def compose_messages(subquery: str, docs: str, schemas: list[TableSchema] | None = None,
                     sql: str | None = None, result: str | None = None) -> list[ChatMessage]:
    if sql is None:
        body = COMPOSE_TEXT_ONLY_TEMPLATE.format(docs=docs, query=subquery)
    else:
        body = COMPOSE_TEMPLATE.format(docs=docs, schema=schema_block(schemas or []), sql=sql,
                                       result=result, query=subquery)
    return [_system("compose", body)]


def judge_messages(question: str, gold: str, predicted: str) -> list[ChatMessage]:
    materials = JUDGE_MATERIALS.format(question=question, gold=gold, predicted=predicted)
    return [_system("judge", JUDGE_TEMPLATE), ChatMessage("user", materials)]


_SQL_FENCE = re.compile(r"```(?:sql)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)


def extract_sql(text: str) -> str:
    """Pull the SQL statement out of a model reply (fenced block preferred)."""
    m = _SQL_FENCE.search(text)
    sql = m.group(1) if m else text
    return sql.strip()


def parse_answer(content: str) -> str | None:
    """Payload after the first answer marker, trimmed of whitespace and brackets."""
    idx = content.find(ANSWER_MARKER)
    if idx < 0:
        return None
    payload = content[idx + len(ANSWER_MARKER):].strip()
    if payload.startswith("[") and payload.endswith("]"):
        payload = payload[1:-1].strip()
    return payload


_RATING = re.compile(r"Rating:\s*\[\[\s*([01])\s*\]\]")


def parse_rating(text: str) -> int | None:
    m = _RATING.search(text)
    return int(m.group(1)) if m else None
