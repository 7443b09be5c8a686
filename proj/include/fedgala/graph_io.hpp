#pragma once

// Graph directory format:
//   meta          "nodes N classes C dim_in D vocab V domain G"
//   edges.tsv     "u\tv" per line, u < v
//   features.f32  N x D little-endian float32, row-major
//   labels.u32    N little-endian uint32
//   tokens.tsv    line i = space-separated token ids of node i

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "fedgala/graph.hpp"
#include "fedgala/wire.hpp"

namespace fedgala {

namespace detail {

inline void write_bytes(const std::filesystem::path& p, const Bytes& b) {
  std::ofstream os(p, std::ios::binary);
  require(static_cast<bool>(os), "graph_core", "cannot write " + p.string());
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline Bytes read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  require(static_cast<bool>(is), "graph_core", "cannot read " + p.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Bytes out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

}  // namespace detail

inline void save_graph(const Graph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream meta(dir / "meta");
    meta << "nodes " << g.num_nodes() << " classes " << g.num_classes() << " dim_in " << g.feature_dim() << " vocab "
         << g.vocab() << " domain " << g.domain_id() << "\n";
  }
  {
    std::ofstream es(dir / "edges.tsv");
    for (const auto& [u, v] : g.edges()) es << u << '\t' << v << '\n';
  }
  ByteWriter feats;
  feats.put_matrix_f32(g.features());
  detail::write_bytes(dir / "features.f32", feats.bytes());
  ByteWriter labels;
  for (auto l : g.labels()) labels.put_u32(l);
  detail::write_bytes(dir / "labels.u32", labels.bytes());
  std::ofstream ts(dir / "tokens.tsv");
  for (const auto& seq : g.tokens()) {
    for (std::size_t i = 0; i < seq.size(); ++i) ts << (i ? " " : "") << seq[i];
    ts << '\n';
  }
}

inline Graph load_graph(const std::filesystem::path& dir) {
  constexpr const char* kMod = "graph_core";
  std::ifstream meta(dir / "meta");
  require(static_cast<bool>(meta), kMod, "missing meta in " + dir.string());
  std::string k_nodes, k_classes, k_dim, k_vocab, k_domain;
  std::size_t n = 0, dim = 0;
  std::uint32_t classes = 0, vocab = 0, domain = 0;
  meta >> k_nodes >> n >> k_classes >> classes >> k_dim >> dim >> k_vocab >> vocab >> k_domain >> domain;
  require(meta && k_nodes == "nodes" && k_classes == "classes" && k_dim == "dim_in" && k_vocab == "vocab" &&
              k_domain == "domain",
          kMod, "malformed meta in " + dir.string());

  std::vector<Edge> edges;
  {
    std::ifstream es(dir / "edges.tsv");
    require(static_cast<bool>(es), kMod, "missing edges.tsv");
    NodeId u, v;
    while (es >> u >> v) edges.emplace_back(u, v);
  }

  const Bytes fbytes = detail::read_bytes(dir / "features.f32");
  require(fbytes.size() == n * dim * 4, kMod, "features.f32 size mismatch");
  Matrix feats(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  ByteReader fr(fbytes);
  fr.get_matrix_f32(feats);

  const Bytes lbytes = detail::read_bytes(dir / "labels.u32");
  require(lbytes.size() == n * 4, kMod, "labels.u32 size mismatch");
  ByteReader lr(lbytes);
  std::vector<ClassId> labels(n);
  for (auto& l : labels) l = lr.get_u32();

  std::vector<TokenSeq> tokens;
  std::ifstream ts(dir / "tokens.tsv");
  require(static_cast<bool>(ts), kMod, "missing tokens.tsv");
  for (std::string line; tokens.size() < n && std::getline(ts, line);) {
    std::istringstream ls(line);
    TokenSeq seq;
    for (TokenId t; ls >> t;) seq.push_back(t);
    tokens.push_back(std::move(seq));
  }
  require(tokens.size() == n, kMod, "tokens.tsv has fewer lines than nodes");
  return Graph(n, std::move(edges), std::move(feats), std::move(labels), std::move(tokens), classes, vocab, domain);
}

}  // namespace fedgala
