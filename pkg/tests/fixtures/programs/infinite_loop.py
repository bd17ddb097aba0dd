def solution():
    total = 0
    while True:
        total += 1
    return total
