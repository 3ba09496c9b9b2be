# UBR2S Adaptation Toolkit
