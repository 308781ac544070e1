# Tests for the cross-validation interval library and command line
