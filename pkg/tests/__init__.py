# Test suite for grk
