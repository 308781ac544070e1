"""Cross-validation, nested cross-validation and competing estimators of prediction error"""
