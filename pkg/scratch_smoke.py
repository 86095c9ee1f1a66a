from simulmt.policy import PolicySchedule, cutoff_step, schedule_to_actions, wait_k_g

s = PolicySchedule.wait_k(2)
print("g(3)=", wait_k_g(2, 3, 7), "cutoff wait2 n7 =", cutoff_step(s, 7))
print("actions wait2 3/3:", schedule_to_actions(s, 3, 3))
print("actions wait1 4/5:", schedule_to_actions(PolicySchedule.wait_k(1), 4, 5))
c = PolicySchedule.wait_k_catchup(3, "1/4")
print("catchup rate:", c.step_rate)
print("catchup g 1..14:", [c.g(t, 20) for t in range(1, 15)])
print("catchup actions:", schedule_to_actions(c, 20, 26))

# reverse catchup, c = -1/5 (r = 0.8): expect 5 reads per 4 writes steady state
rc = PolicySchedule.wait_k_catchup(3, "-1/5")
print("reverse rate:", rc.step_rate)
print("reverse actions:", schedule_to_actions(rc, 20, 17))

from fractions import Fraction
from simulmt.latency import DecodingTrace, average_lagging, average_proportion, consecutive_wait

tr = DecodingTrace.from_actions("RRWRWRWRWRWWWW")
print("bush-shaped trace g:", tr.g_values)
print("AL r=9/7:", average_lagging(tr, Fraction(9, 7)), float(average_lagging(tr, Fraction(9, 7))))
for k in (1, 2, 3):
    n = 10
    t = DecodingTrace.from_schedule(PolicySchedule.wait_k(k), n, n)
    print(f"wait-{k} n=10: AL(r=1) =", average_lagging(t, 1), " CW =", consecutive_wait(t), " AP =", average_proportion(t))

# catchup AL acceptance shape: c=0.25 (r-1 semantics), r=1.25, n=40
n = 40
for k in range(1, 6):
    sched = PolicySchedule.wait_k_catchup(k, "1/4")
    t = DecodingTrace.from_schedule(sched, n, 50)
    al = average_lagging(t, Fraction(5, 4))
    print(f"catchup k={k}: AL={float(al):.4f} in [k-0.5,k+0.5]? {k-0.5 <= al <= k+0.5}")

# latency-module invariant shape: raw formula with step rate 0.25, r = 1/(1-c) = 4/3
from simulmt.policy import wait_k_catchup_g
for k in range(1, 6):
    g = []
    best = 0
    for t in range(1, 61):
        best = max(best, wait_k_catchup_g(k, Fraction(1, 4), t, n))
        g.append(best)
    tr2 = DecodingTrace(n, len(g), tuple(g))
    al = average_lagging(tr2, Fraction(4, 3))
    print(f"raw catchup k={k}: AL={float(al):.4f} in [k-0.5,k+0.5]? {k-0.5 <= al <= k+0.5}")
