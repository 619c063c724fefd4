"""Named run-spec presets in the same INI format as user spec files."""

PRESETS = {
    # character LM used for the hidden-to-hidden BN study: lookup table of
    # 250, 3 vanilla RNN layers of 250, softmax sized by the corpus vocab
    "appendix-a-baseline": """
[task]
kind = char-lm
corpus =

[model]
cell = rnn
layers = 3
hidden = 250
embedding = 250
init = glorot

[bn]
placement = none

[train]
lr = 0.1
momentum = 0.9
batch_size = 64
bptt_window = 100
epochs = 20
schedule = constant
""",
    "appendix-a-bn": """
[task]
kind = char-lm
corpus =

[model]
cell = rnn
layers = 3
hidden = 250
embedding = 250
init = glorot

[bn]
placement = preact
axis = frame

[train]
lr = 0.1
momentum = 0.9
batch_size = 64
bptt_window = 100
epochs = 20
schedule = constant
""",
    # speech-like recipe on the synthetic alignment task
    "wsj-like": """
[task]
kind = synth-align
sequences = 2000
features = 8
classes = 4
min_length = 8
max_length = 16
data_seed = 7

[model]
cell = lstm
layers = 5
hidden = 250
bidirectional = true
init = glorot

[bn]
placement = none

[train]
lr = 1e-4
momentum = 0.9
batch_size = 24
epochs = 10
schedule = constant
""",
    "wsj-like-bn": """
[task]
kind = synth-align
sequences = 2000
features = 8
classes = 4
min_length = 8
max_length = 16
data_seed = 7

[model]
cell = lstm
layers = 5
hidden = 250
bidirectional = true
init = glorot

[bn]
placement = input
axis = sequence

[train]
lr = 1e-4
momentum = 0.9
batch_size = 24
epochs = 10
schedule = constant
""",
    # PTB-style LM recipes, desk-scaled to character level; override
    # model.hidden (200/650/1500) to match the full-size versions
    "ptb-small": """
[task]
kind = char-lm
corpus =

[model]
cell = lstm
layers = 2
hidden = 200
embedding = 200
init = uniform:0.1

[bn]
placement = none

[train]
lr = 1
momentum = 0
batch_size = 32
bptt_window = 20
grad_clip = 10
epochs = 15
schedule = halve_after:6
""",
    "ptb-medium": """
[task]
kind = char-lm
corpus =

[model]
cell = lstm
layers = 2
hidden = 650
embedding = 650
init = uniform:0.05

[bn]
placement = none

[train]
lr = 1
momentum = 0
batch_size = 32
bptt_window = 35
grad_clip = 5
dropout = 0.5
epochs = 40
schedule = divide_by:1.2:6
""",
    "ptb-large": """
[task]
kind = char-lm
corpus =

[model]
cell = lstm
layers = 2
hidden = 1500
embedding = 1500
init = uniform:0.04

[bn]
placement = none

[train]
lr = 1
momentum = 0
batch_size = 32
bptt_window = 35
grad_clip = 5
dropout = 0.5
epochs = 55
schedule = divide_by:1.15:15
""",
}
