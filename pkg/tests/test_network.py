import numpy as np
import pytest

from stdnet import (DeformationNetwork, DimensionError, NetworkConfig, ObbNode,
                    TagcnLayer, Tape, build_adjacency, graph_unpool,
                    load_checkpoint, mesh_cuboid, midpoint_subdivide,
                    network_forward, save_checkpoint, tagcn_forward)
from stdnet.errors import DataFormatError
from stdnet.mesh import AdjacencyOperator, TriangleMesh


def unit_cube_mesh(subdivisions=0):
    return mesh_cuboid(ObbNode(np.zeros(3), np.eye(3), (0.5, 0.5, 0.5)), subdivisions)


def triangle_mesh():
    return TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def small_config(**overrides):
    base = dict(hops=2, channels=6, layers_per_block=3, blocks=3,
                residual_every=2, seed=0)
    base.update(overrides)
    return NetworkConfig(**base)


class TestTagcnLayer:
    def test_identity_configuration_returns_input(self):
        layer = TagcnLayer(3, 3, hops=2, activation="identity", zero_init=True)
        layer.weights[0][...] = np.eye(3)
        mesh = unit_cube_mesh()
        adj = build_adjacency(mesh, 2)
        t = Tape()
        x = t.leaf(mesh.vertices)
        out = tagcn_forward(layer, adj, x)
        assert np.array_equal(out.value, mesh.vertices)

    def test_isolated_vertex_hand_expansion(self):
        # one vertex with a self loop: every power of the adjacency is 1, so
        # the output is f(x (W0 + W1 + W2))
        layer = TagcnLayer(2, 2, hops=2, use_bias=False, activation="identity",
                           rng=np.random.default_rng(1))
        adj = AdjacencyOperator.from_edges(1, np.empty((0, 2), int), hops=2, mode="sym")
        x = np.array([[0.3, -0.7]])
        t = Tape()
        out = tagcn_forward(layer, adj, t.leaf(x))
        expected = x @ (layer.weights[0] + layer.weights[1] + layer.weights[2])
        assert np.allclose(out.value, expected, atol=1e-14)

    def test_complete_graph_constant_rows_stay_constant(self):
        mesh = triangle_mesh()
        adj = build_adjacency(mesh, 2)
        layer = TagcnLayer(4, 5, hops=2, rng=np.random.default_rng(2))
        x = np.tile(np.array([[0.1, -0.2, 0.3, 0.4]]), (3, 1))
        out = tagcn_forward(layer, adj, Tape().leaf(x))
        assert np.allclose(out.value, out.value[0], atol=1e-12)

    def test_channel_mismatch_raises(self):
        layer = TagcnLayer(4, 5)
        adj = build_adjacency(triangle_mesh(), 2)
        with pytest.raises(DimensionError):
            tagcn_forward(layer, adj, Tape().leaf(np.zeros((3, 3))))

    def test_locality_k_hops(self):
        # path of 7 vertices: perturbing one end must not move outputs more
        # than K hops away
        n = 7
        edges = np.array([[i, i + 1] for i in range(n - 1)])
        adj = AdjacencyOperator.from_edges(n, edges, hops=2, mode="sym")
        layer = TagcnLayer(1, 1, hops=2, use_bias=False,
                           rng=np.random.default_rng(3))
        base = np.zeros((n, 1))
        poked = base.copy()
        poked[0, 0] = 1.0
        out_a = tagcn_forward(layer, adj, Tape().leaf(base)).value
        out_b = tagcn_forward(layer, adj, Tape().leaf(poked)).value
        changed = np.abs(out_a - out_b).ravel() > 0
        assert changed[:3].any()
        assert not changed[3:].any()

    def test_hops_zero_is_pointwise(self):
        layer = TagcnLayer(3, 3, hops=0, use_bias=False, activation="identity",
                           rng=np.random.default_rng(4))
        x = np.random.default_rng(5).normal(size=(4, 3))
        out = tagcn_forward(layer, None, Tape().leaf(x))
        assert np.allclose(out.value, x @ layer.weights[0])


class TestPermutationEquivariance:
    def test_tagcn_commutes_with_permutation(self):
        rng = np.random.default_rng(6)
        mesh = unit_cube_mesh()
        adj = build_adjacency(mesh, 2)
        layer = TagcnLayer(3, 4, hops=2, rng=rng)
        x = rng.normal(size=(mesh.n_vertices, 3))
        perm = rng.permutation(mesh.n_vertices)
        # permuted mesh: relabel vertices, same geometry
        inv = np.empty_like(perm)
        inv[perm] = np.arange(mesh.n_vertices)
        pmesh = TriangleMesh(mesh.vertices[perm], inv[mesh.faces])
        padj = build_adjacency(pmesh, 2)
        out = tagcn_forward(layer, adj, Tape().leaf(x)).value
        pout = tagcn_forward(layer, padj, Tape().leaf(x[perm])).value
        assert np.abs(pout - out[perm]).max() < 1e-12


class TestGraphUnpool:
    def test_single_triangle(self):
        mesh, feats = graph_unpool(triangle_mesh(), np.ones((3, 2)))
        assert (mesh.n_vertices, mesh.n_faces) == (6, 4)
        assert feats.shape == (6, 2)

    def test_cube_counts_and_euler(self):
        cube = unit_cube_mesh()
        mesh, _ = graph_unpool(cube, np.zeros((8, 1)))
        assert (mesh.n_vertices, mesh.n_faces) == (26, 48)
        assert mesh.euler_characteristic == 2
        assert mesh.is_closed()

    def test_constant_features_stay_constant(self):
        c = 3.25
        _, feats = graph_unpool(unit_cube_mesh(), np.full((8, 3), c))
        assert (feats == c).all()

    def test_tensor_features_match_array_features(self):
        rng = np.random.default_rng(8)
        cube = unit_cube_mesh()
        feats = rng.normal(size=(8, 5))
        _, arr_out = graph_unpool(cube, feats)
        t = Tape()
        _, tensor_out = graph_unpool(cube, t.leaf(feats, requires_grad=True))
        assert np.array_equal(tensor_out.value, arr_out)

    def test_features_row_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            graph_unpool(unit_cube_mesh(), np.zeros((5, 3)))


class TestDeformationBlocks:
    def test_zero_network_is_identity(self):
        net = DeformationNetwork(small_config())
        for p in net.parameters().values():
            p[...] = 0.0
        cube = unit_cube_mesh()
        meshes = network_forward(net, cube)
        assert [m.n_vertices for m in meshes] == [8, 26, 98]
        assert np.array_equal(meshes[0].vertices, cube.vertices)
        sub1 = midpoint_subdivide(cube)
        sub2 = midpoint_subdivide(sub1)
        assert np.array_equal(meshes[1].vertices, sub1.vertices)
        assert np.array_equal(meshes[2].vertices, sub2.vertices)

    def test_fresh_network_is_identity_deformation(self):
        # coordinate branches start at zero, so an untrained network does not
        # move any vertex
        net = DeformationNetwork(small_config(seed=123))
        cube = unit_cube_mesh()
        meshes = network_forward(net, cube)
        assert np.array_equal(meshes[0].vertices, cube.vertices)

    def test_forward_shapes_and_finiteness(self):
        net = DeformationNetwork(small_config(seed=1))
        for name, p in net.parameters().items():
            if "coord" in name:
                p[...] = np.random.default_rng(0).normal(size=p.shape) * 0.01
        box = ObbNode(np.zeros(3), np.eye(3), (0.2, 0.5, 0.9))
        outs = net.forward(Tape(), mesh_cuboid(box))
        assert [o.v_out.shape for o in outs] == [(8, 3), (26, 3), (98, 3)]
        for o in outs:
            assert np.isfinite(o.v_out.value).all()

    def test_vertex_counts_independent_of_proportions(self):
        net = DeformationNetwork(small_config())
        for extents in ((0.5, 0.5, 0.5), (0.1, 0.4, 2.0)):
            meshes = network_forward(net, mesh_cuboid(ObbNode(np.zeros(3), np.eye(3), extents)))
            assert [m.n_vertices for m in meshes] == [8, 26, 98]

    def test_accepts_different_topologies_without_reconfiguration(self):
        net = DeformationNetwork(small_config())
        single = network_forward(net, unit_cube_mesh())
        double = network_forward(net, unit_cube_mesh(1))
        assert [m.n_vertices for m in single] == [8, 26, 98]
        assert [m.n_vertices for m in double] == [26, 98, 386]

    def test_residual_connections_affect_output(self):
        cfg_with = small_config(seed=2, layers_per_block=5)
        cfg_without = small_config(seed=2, layers_per_block=5, residual_every=99)
        cube = unit_cube_mesh()

        def final_feats(cfg):
            net = DeformationNetwork(cfg)
            return net.forward(Tape(), cube)[-1].features.value

        assert not np.allclose(final_feats(cfg_with), final_feats(cfg_without))

    def test_block_gradient_matches_finite_differences(self):
        from stdnet import gradcheck
        cfg = small_config(channels=4, layers_per_block=2, blocks=1, seed=3)
        net = DeformationNetwork(cfg)
        mesh = triangle_mesh()
        state = net.state()
        names = [n for n in state if "W1" in n][:2]

        def loss(ts):
            tape = ts[0].tape
            bound = {n: tape.leaf(a) for n, a in state.items()}
            for n, tensor in zip(names, ts):
                bound[n] = tensor
            out = net.forward(tape, mesh, bound=bound)
            return out[0].v_out.square().sum()

        report = gradcheck(loss, {n: state[n] for n in names}, tol=1e-5)
        assert report.passed, str(report)


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        cfg = small_config(seed=11)
        net = DeformationNetwork(cfg)
        rng = np.random.default_rng(12)
        for p in net.parameters().values():
            p[...] = rng.normal(size=p.shape)
        path = tmp_path / "model.stdn"
        save_checkpoint(path, net)
        loaded = load_checkpoint(path)
        assert loaded.config == net.config
        for name, p in net.parameters().items():
            assert loaded.parameters()[name].tobytes() == p.tobytes()
        cube = unit_cube_mesh()
        a = network_forward(net, cube)
        b = network_forward(loaded, cube)
        for ma, mb in zip(a, b):
            assert ma.vertices.tobytes() == mb.vertices.tobytes()

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "model.stdn"
        save_checkpoint(path, DeformationNetwork(small_config()))
        assert path.read_bytes()[:8] == b"STDN0001"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.stdn"
        path.write_bytes(b"NOTMAGIC" + b"\0" * 64)
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "model.stdn"
        net = DeformationNetwork(small_config())
        save_checkpoint(path, net)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 16])
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_state_round_trip(self):
        net = DeformationNetwork(small_config(seed=5))
        state = net.state()
        for p in net.parameters().values():
            p[...] = 0.0
        net.load_state(state)
        for name, p in net.parameters().items():
            assert np.array_equal(p, state[name])
