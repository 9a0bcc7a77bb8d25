"""Diagnosis network with visual and textual justification, desk scale.

Subpackages:
    numerics    float64 tensors with reverse-mode differentiation, Adam,
                gradient checking, checkpoint I/O
    generator   encoder, diagnosis head, attention fusion, LSTM decoder
    constraint  sentence classifier and the combined training loss
    dataset     synthetic ROI corpus, augmentation, vocabulary
    metrics     BLEU / ROUGE-L / CIDEr / sentence ratios / AUC
    training    three-phase training driver and evaluation loop
    cli         command line entry point
"""

__version__ = "0.1.0"
