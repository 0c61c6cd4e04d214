from genrelyrics.tokenizer import BLANK_ID, UNK_ID, train_bpe

"""
Training a tiny subword model
"""
lines = ["oh baby baby", "love me tonight", "yeah yeah oh", "night of fire", "baby love tonight"]
bpe = train_bpe(lines, 40)
print("vocabulary size:", bpe.vocab_size)
print("blank, unk, sos/eos ids:", BLANK_ID, UNK_ID, bpe.vocab_size - 1)

"""
Encoding and decoding
"""
for text in ["baby love", "tonight oh yeah", "unseen zebra"]:
    ids = bpe.encode(text)
    pieces = [bpe.id_to_token[i] for i in ids]
    print(f"{text!r:20} -> {pieces} -> {bpe.decode(ids)!r}")
# symbols never seen in training become <unk>, and a word-initial <unk> takes
# its word boundary with it

"""
Merges are greedy and deterministic
"""
print(bpe.merges[:5])
print(train_bpe(lines, 40).merges == bpe.merges)
