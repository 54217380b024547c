"""輔助工具（測試饋線產生器）"""
