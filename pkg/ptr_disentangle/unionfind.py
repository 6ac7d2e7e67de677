from typing import Dict, Hashable, Iterable, List


class UnionFind:
    """
        Disjoint sets with union by size and path compression. Elements are added lazily,
        so the structure grows together with an utterance stream.
    """

    def __init__(self, elements: Iterable[Hashable] = ()):

        self._leader: Dict[Hashable, Hashable] = dict()
        self._size: Dict[Hashable, int] = dict()
        self.n_components = 0

        for element in elements:
            self.add(element)

    def __contains__(self, element: Hashable) -> bool:
        return element in self._leader

    def __len__(self) -> int:
        return len(self._leader)

    def __repr__(self):
        return f"UnionFind({len(self)} elements, {self.n_components} components)"

    def add(self, element: Hashable):

        if element in self._leader:
            return

        self._leader[element] = element
        self._size[element] = 1
        self.n_components += 1

    def find(self, element: Hashable) -> Hashable:

        root = element
        while root != self._leader[root]:
            root = self._leader[root]

        # compress the path taken so every visited element points to the root
        while element != root:
            next_element = self._leader[element]
            self._leader[element] = root
            element = next_element

        return root

    def union(self, a: Hashable, b: Hashable) -> Hashable:

        self.add(a)
        self.add(b)

        root_a, root_b = self.find(a), self.find(b)
        if root_a == root_b:
            return root_a

        if self._size[root_a] < self._size[root_b]:
            root_a, root_b = root_b, root_a

        self._leader[root_b] = root_a
        self._size[root_a] += self._size[root_b]
        self.n_components -= 1

        return root_a

    def component_size(self, element: Hashable) -> int:
        return self._size[self.find(element)]

    def components(self) -> List[List[Hashable]]:
        """Components in order of their smallest element, members sorted."""

        groups: Dict[Hashable, List[Hashable]] = dict()
        for element in sorted(self._leader):
            groups.setdefault(self.find(element), list()).append(element)

        return list(groups.values())
