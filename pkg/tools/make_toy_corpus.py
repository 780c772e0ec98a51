"""Regenerate src/medner/data/toy_corpus.pubtator from the marked-up sentences below.

Markup: [[surface|TYPES]] where TYPES is a comma-separated type list.
Each document is a title sentence followed by three abstract sentences.
"""
import re
import zlib
from pathlib import Path

DOCS = [
    ("[[Metformin|T121]] for [[type 2 diabetes|T047]] .",
     "Patients with [[type 2 diabetes|T047]] received [[metformin|T121,T109]] daily . "
     "[[Fatigue|T184]] and [[nausea|T184]] were recorded after 12 weeks . "
     "A [[glucose tolerance test|T059]] was performed on the [[liver|T023]] cohort ."),
    ("[[Aspirin|T121]] after [[coronary angioplasty|T061]] .",
     "We studied 240 adults undergoing [[coronary angioplasty|T061]] . "
     "All patients received [[aspirin|T121]] and [[heparin|T121]] . "
     "[[Chest pain|T184]] recurred in 14 patients with [[myocardial infarction|T047]] ."),
    ("[[Asthma|T047]] control with [[salbutamol|T121]] .",
     "Children with [[asthma|T047]] reported [[wheezing|T184]] and [[cough|T184]] . "
     "[[Spirometry|T059]] measured airflow in the [[lung|T023]] . "
     "[[Salbutamol|T121]] reduced [[wheezing|T184]] within 3 days ."),
    ("[[Kidney|T023]] outcomes after [[hemodialysis|T061]] .",
     "Patients with [[chronic kidney disease|T047]] started [[hemodialysis|T061]] . "
     "[[Serum creatinine|T059]] was measured every 2 weeks . "
     "[[Edema|T184]] of the [[leg|T023]] improved after [[furosemide|T121]] ."),
    ("[[Pneumonia|T047]] treated with [[amoxicillin|T121]] .",
     "Adults with [[pneumonia|T047]] presented with [[fever|T184]] and [[cough|T184]] . "
     "A [[chest radiograph|T059]] showed opacity in the [[lung|T023]] . "
     "[[Amoxicillin|T121]] was given for 7 days ."),
    ("[[Hip replacement|T061]] in [[osteoarthritis|T047]] .",
     "Patients with [[osteoarthritis|T047]] of the [[hip|T023]] had [[joint pain|T184]] . "
     "[[Hip replacement|T061]] was performed in 58 cases . "
     "[[Ibuprofen|T121]] relieved [[joint pain|T184]] after surgery ."),
    ("[[Migraine|T047]] and [[sumatriptan|T121]] .",
     "Women with [[migraine|T047]] described [[headache|T184]] and [[nausea|T184]] . "
     "[[Magnetic resonance imaging|T059]] of the [[brain|T023]] was normal . "
     "[[Sumatriptan|T121]] relieved [[headache|T184]] in 2 hours ."),
    ("[[Appendectomy|T061]] for [[appendicitis|T047]] .",
     "Children with [[appendicitis|T047]] had [[abdominal pain|T184]] and [[fever|T184]] . "
     "An [[abdominal ultrasound|T059]] showed an inflamed [[appendix|T023]] . "
     "[[Appendectomy|T061]] was followed by [[cefazolin|T121]] ."),
    ("[[Hypertension|T047]] managed with [[lisinopril|T121]] .",
     "Patients with [[hypertension|T047]] reported [[dizziness|T184]] at baseline . "
     "[[Blood pressure measurement|T059]] was repeated at 6 months . "
     "[[Lisinopril|T121]] protected the [[heart|T023]] and [[kidney|T023]] ."),
    ("[[Cataract surgery|T061]] and [[glaucoma|T047]] .",
     "Patients with [[glaucoma|T047]] complained of [[blurred vision|T184]] . "
     "[[Tonometry|T059]] measured pressure in the [[eye|T023]] . "
     "[[Cataract surgery|T061]] was combined with [[timolol|T121]] drops ."),
]

MARK = re.compile(r"\[\[([^|\]]+)\|([^\]]+)\]\]")


def render(marked, offset):
    out, mentions, pos = [], [], 0
    for m in MARK.finditer(marked):
        out.append(marked[pos:m.start()])
        start = offset + sum(len(s) for s in out)
        out.append(m.group(1))
        mentions.append((start, start + len(m.group(1)), m.group(1), m.group(2)))
        pos = m.end()
    out.append(marked[pos:])
    return "".join(out), mentions


def main():
    lines = []
    for i, (title, abstract) in enumerate(DOCS):
        doc_id = str(9000001 + i)
        t_text, t_m = render(title, 0)
        a_text, a_m = render(abstract, len(t_text) + 1)
        lines.append(f"{doc_id}|t|{t_text}")
        lines.append(f"{doc_id}|a|{a_text}")
        for s, e, surf, types in t_m + a_m:
            lines.append(f"{doc_id}\t{s}\t{e}\t{surf}\t{types}\tC{zlib.crc32(surf.lower().encode()) % 10**7:07d}")
        lines.append("")
    out = Path(__file__).resolve().parents[1] / "src/medner/data/toy_corpus.pubtator"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
