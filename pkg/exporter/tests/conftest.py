import os

# keep transformers from ever consulting the hub; everything loads from disk
os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

import json

import pytest

HIDDEN = 32
LAYERS = 4

_WORDS = (
    "int float char return if else for while ( ) { } ; = + - * / < > "
    "a b c x y z n i j buf len src dst 0 1 2 3"
).split()


def build_toy_model(dest, hidden=HIDDEN, layers=LAYERS, seed=0):
    """Randomly initialized BERT-style encoder small enough for CI."""
    import torch
    from tokenizers import Tokenizer, models, pre_tokenizers
    from tokenizers.processors import TemplateProcessing
    from transformers import BertConfig, BertModel, PreTrainedTokenizerFast

    vocab = {"[PAD]": 0, "[UNK]": 1, "[CLS]": 2, "[SEP]": 3}
    for word in _WORDS:
        vocab.setdefault(word, len(vocab))
    core = Tokenizer(models.WordLevel(vocab=vocab, unk_token="[UNK]"))
    core.pre_tokenizer = pre_tokenizers.Whitespace()
    core.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=core,
        pad_token="[PAD]",
        unk_token="[UNK]",
        cls_token="[CLS]",
        sep_token="[SEP]",
    )
    torch.manual_seed(seed)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=hidden,
        num_hidden_layers=layers,
        num_attention_heads=4,
        intermediate_size=hidden * 2,
        max_position_embeddings=512,
    )
    model = BertModel(config)
    model.save_pretrained(dest)
    tokenizer.save_pretrained(dest)
    return dest


@pytest.fixture(scope="session")
def toy_model_dir(tmp_path_factory):
    return build_toy_model(tmp_path_factory.mktemp("toy-model"))


def toy_sources(n=10):
    # vocabulary-covered snippets of varying length, no [UNK] needed
    bodies = [
        "int a ( int x ) { return x + 1 ; }",
        "int b ( int x ) { if ( x < 1 ) { return 0 ; } return x ; }",
        "float c ( float y ) { return y * y ; }",
        "int n ( int i ) { for ( i = 0 ; i < 3 ; i = i + 1 ) { } return i ; }",
        "char x ( char z ) { return z ; }",
        "int y ( int a ) { while ( a > 0 ) { a = a - 1 ; } return a ; }",
        "int z ( int buf ) { int len = 2 ; return buf + len ; }",
        "int i ( int src ) { int dst = src ; return dst ; }",
        "float j ( float n ) { if ( n > 1 ) { return n / 2 ; } else { return n ; } }",
        "int len ( int c ) { return c * 2 + 1 ; }",
    ]
    return bodies[:n]


def write_sample_manifest(path, sources, dataset="toy"):
    cwes = ("CWE-787", "CWE-125")
    with open(path, "w", encoding="utf-8") as fh:
        for i, source in enumerate(sources):
            rec = {
                "id": f"s{i:02d}",
                "source": source,
                "cwe": cwes[i % 2],
                "dataset": dataset,
            }
            fh.write(json.dumps(rec) + "\n")
    return path
