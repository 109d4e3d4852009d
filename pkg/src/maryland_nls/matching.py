"""Site <-> eigenvector relabelling by bipartite matching.

The primary route is a maximum-cardinality matching grown with
augmenting paths from a seed (each vector offered its own localization
centre first).  When that matching is not perfect, the assignment falls
back to the weight-maximising assignment of sum |psi(s)|^2.
"""
from collections import deque

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import MatchingIncomplete


def hopcroft_karp(adj, n_right, seed=None):
    """Maximum matching of a bipartite graph.

    Parameters
    ----------
    adj : list of lists
        ``adj[u]`` holds the right vertices adjacent to left vertex ``u``.
    n_right : int
    seed : dict, optional
        Initial partial matching ``{u: v}``; must be a valid matching.

    Returns
    -------
    match_left : ndarray of int
        Right partner of each left vertex, -1 when unmatched.
    """
    n_left = len(adj)
    match_l = np.full(n_left, -1, dtype=np.int64)
    match_r = np.full(n_right, -1, dtype=np.int64)
    for u, v in (seed or {}).items():
        if match_r[v] == -1 and match_l[u] == -1:
            match_l[u], match_r[v] = v, u
    inf = n_left + 1
    dist = np.zeros(n_left, dtype=np.int64)

    def bfs():
        queue = deque()
        found = False
        for u in range(n_left):
            if match_l[u] == -1:
                dist[u] = 0
                queue.append(u)
            else:
                dist[u] = inf
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                w = match_r[v]
                if w == -1:
                    found = True
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return found

    def dfs(u):
        # iterative DFS along the layered graph
        stack = [(u, iter(adj[u]))]
        path = []
        while stack:
            node, it = stack[-1]
            advanced = False
            for v in it:
                w = match_r[v]
                if w == -1:
                    path.append((node, v))
                    for a, b in path:
                        match_l[a], match_r[b] = b, a
                    return True
                if dist[w] == dist[node] + 1:
                    path.append((node, v))
                    stack.append((w, iter(adj[w])))
                    advanced = True
                    break
            if not advanced:
                dist[node] = inf
                stack.pop()
                if path:
                    path.pop()
        return False

    while bfs():
        for u in range(n_left):
            if match_l[u] == -1:
                dfs(u)
    return match_l


def relabel(sites, vectors, centers, radius=2):
    """Assign one eigenvector to every site.

    Parameters
    ----------
    sites : (S, d) int array
    vectors : (S, S) array, column k is eigenvector k over ``sites``
    centers : (S,) int array, index into ``sites`` of each vector's centre
    radius : int
        l-infinity radius for admissible (site, vector) edges.

    Returns
    -------
    assign : (S,) int array, vector index for each site
    method : str, ``"matching"`` or ``"assignment"``
    """
    sites = np.asarray(sites)
    n = len(sites)
    dist = np.abs(sites[:, None, :] - sites[None, :, :]).max(axis=2)
    near = dist[:, centers] <= radius  # near[s, k]: site s close to centre of vector k
    adj = [list(np.flatnonzero(near[s])) for s in range(n)]
    seed = {}
    taken = set()
    for k, c in enumerate(centers):
        if c not in seed and k not in taken:
            seed[int(c)] = k
            taken.add(k)
    match = hopcroft_karp(adj, n, seed=seed)
    if np.all(match >= 0):
        return match, "matching"
    weight = np.abs(vectors) ** 2
    rows, cols = linear_sum_assignment(-weight)
    assign = np.empty(n, dtype=np.int64)
    assign[rows] = cols
    bad = [tuple(sites[s]) for s in range(n) if weight[s, assign[s]] == 0.0]
    if bad:
        raise MatchingIncomplete(bad)
    return assign, "assignment"
