from genrelyrics.scoring import corpus_wer, score, wer

"""
Single lines
"""
r = wer("the quick brown fox", "the brown fox")
print(r, f"-> {100 * r.wer:.0f}%")
print(wer("oh baby", "oh oh baby baby"))   # insertions can push WER above 100%

"""
A per-genre report
"""
refs = {
    "m1": ("fire in the night", "metal"),
    "m2": ("burn it down", "metal"),
    "p1": ("love me tonight", "pop"),
    "p2": ("baby baby oh", "pop"),
}
hyps = {"m1": "fire in night", "m2": "born it down now", "p1": "love me tonight"}
report = score(refs, hyps)
print(report.to_text())
print("utterances without a hypothesis:", report.missing)
print("pooled WER equals corpus_wer:", report.overall == corpus_wer((refs[k][0], hyps.get(k, "")) for k in refs))
