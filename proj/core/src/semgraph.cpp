#include "semtx/semgraph.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "semtx/error.hpp"
#include "text_util.hpp"

namespace semtx {

using detail::is_blank;
using detail::parse_int;
using detail::split_lines;
using detail::split_on;
using detail::split_ws;

namespace {

struct NumberedLine {
  std::size_t number;  // 1-based, relative to the whole file
  std::string_view text;
};

std::vector<NumberedLine> number_lines(std::string_view text) {
  std::vector<NumberedLine> out;
  std::size_t n = 0;
  for (auto line : split_lines(text)) out.push_back({++n, line});
  return out;
}

// Splits a numbered file into chunks, each beginning at a "#L" header.
// Anything before the first header must be blank or a comment.
std::vector<std::vector<NumberedLine>> chunk_by_header(
    const std::vector<NumberedLine>& lines) {
  std::vector<std::vector<NumberedLine>> chunks;
  for (const auto& l : lines) {
    auto fields = split_ws(l.text);
    if (!fields.empty() && fields[0] == "#L") {
      chunks.emplace_back();
    } else if (chunks.empty()) {
      if (is_blank(l.text) || l.text.front() == '#') continue;
      throw ParseError("record before \"#L\" header", l.number);
    }
    chunks.back().push_back(l);
  }
  return chunks;
}

int parse_length_header(const NumberedLine& l) {
  auto fields = split_ws(l.text);
  if (fields.size() != 2) throw ParseError("expected \"#L <int>\"", l.number);
  auto n = parse_int(fields[1]);
  if (!n || *n < 1) throw ParseError("bad sentence length", l.number);
  return static_cast<int>(*n);
}

std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

void sort_unique(std::vector<int>& xs) {
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
}

bool is_subset(const std::vector<int>& sub, const std::vector<int>& super) {
  return std::includes(super.begin(), super.end(), sub.begin(), sub.end());
}

UccaGraph parse_ucca_chunk(const std::vector<NumberedLine>& lines) {
  UccaGraph g;
  const int length = parse_length_header(lines.front());
  std::set<NodeId> declared;
  auto declare = [&](const NodeId& id) {
    if (declared.insert(id).second) g.nodes.push_back(id);
  };
  std::vector<std::pair<UccaEdge, std::size_t>> edges;
  std::map<int, std::size_t> token_line;
  bool have_root = false;

  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& l = lines[k];
    if (is_blank(l.text) || l.text.front() == '#') continue;
    auto f = split_ws(l.text);
    if (f[0] == "T") {
      if (f.size() != 4) throw ParseError("expected \"T <node> <index> <surface>\"", l.number);
      auto idx = parse_int(f[2]);
      if (!idx) throw ParseError("bad token index", l.number);
      if (*idx < 0 || *idx >= length)
        throw StructuralError("line " + std::to_string(l.number) +
                              ": token index out of range");
      if (token_line.count(static_cast<int>(*idx)))
        throw StructuralError("line " + std::to_string(l.number) +
                              ": duplicate token index " + std::string(f[2]));
      token_line[static_cast<int>(*idx)] = l.number;
      NodeId node(f[1]);
      if (declared.count(node))
        throw StructuralError("line " + std::to_string(l.number) +
                              ": terminal node declared twice: " + node);
      declare(node);
      g.terminals.push_back({node, static_cast<int>(*idx), std::string(f[3])});
    } else if (f[0] == "E") {
      if (f.size() != 4 && f.size() != 5)
        throw ParseError("expected \"E <parent> <child> <category> [R]\"", l.number);
      if (f.size() == 5 && f[4] != "R")
        throw ParseError("unknown edge flag \"" + std::string(f[4]) + "\"", l.number);
      edges.push_back({{NodeId(f[1]), NodeId(f[2]), std::string(f[3]), f.size() == 5},
                       l.number});
    } else if (f[0] == "ROOT") {
      if (f.size() != 2) throw ParseError("expected \"ROOT <node>\"", l.number);
      if (have_root) throw StructuralError("line " + std::to_string(l.number) + ": second ROOT");
      g.root = NodeId(f[1]);
      have_root = true;
    } else {
      throw ParseError("unknown record \"" + std::string(f[0]) + "\"", l.number);
    }
  }
  if (!have_root) throw StructuralError("graph has no ROOT record");
  declare(g.root);
  // Internal nodes are declared by having children; a child that is neither
  // a terminal nor a parent anywhere is a dangling reference.
  for (const auto& [e, line] : edges) declare(e.parent);
  for (const auto& [e, line] : edges) {
    if (!declared.count(e.child))
      throw StructuralError("line " + std::to_string(line) +
                            ": edge references undeclared node " + e.child);
    g.edges.push_back(e);
  }
  std::sort(g.terminals.begin(), g.terminals.end(),
            [](const auto& a, const auto& b) { return a.token < b.token; });
  validate(g);
  if (g.length() != length)
    throw StructuralError("header declares " + std::to_string(length) +
                          " tokens but " + std::to_string(g.length()) + " terminals found");
  return g;
}

std::vector<int> parse_index_spec(std::string_view spec, std::size_t line) {
  std::vector<int> out;
  if (spec.empty()) throw ParseError("empty index list", line);
  for (auto part : split_on(spec, ',')) {
    auto dash = part.find('-');
    if (dash == std::string_view::npos) {
      auto v = parse_int(part);
      if (!v) throw ParseError("bad token index \"" + std::string(part) + "\"", line);
      out.push_back(static_cast<int>(*v));
    } else {
      auto lo = parse_int(part.substr(0, dash));
      auto hi = parse_int(part.substr(dash + 1));
      if (!lo || !hi || *lo > *hi)
        throw ParseError("bad token range \"" + std::string(part) + "\"", line);
      for (long long v = *lo; v <= *hi; ++v) out.push_back(static_cast<int>(v));
    }
  }
  return out;
}

SceneCover parse_cover_chunk(const std::vector<NumberedLine>& lines) {
  const int length = parse_length_header(lines.front());
  std::vector<Scene> scenes;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& l = lines[k];
    if (is_blank(l.text) || l.text.front() == '#') continue;
    auto f = split_ws(l.text);
    if (f[0] != "S" || f.size() != 4)
      throw ParseError("expected \"S <P|S> main=<i-j> tokens=<list>\"", l.number);
    Scene s;
    if (f[1] == "P") {
      s.kind = RelationKind::Process;
    } else if (f[1] == "S") {
      s.kind = RelationKind::State;
    } else {
      throw ParseError("scene kind must be P or S", l.number);
    }
    if (f[2].substr(0, 5) != "main=") throw ParseError("missing main=", l.number);
    if (f[3].substr(0, 7) != "tokens=") throw ParseError("missing tokens=", l.number);
    s.main_relation = parse_index_spec(f[2].substr(5), l.number);
    s.tokens = parse_index_spec(f[3].substr(7), l.number);
    scenes.push_back(std::move(s));
  }
  return make_cover(length, std::move(scenes));
}

}  // namespace

std::vector<std::string> UccaGraph::tokens() const {
  std::vector<std::string> out;
  out.reserve(terminals.size());
  for (const auto& t : terminals) out.push_back(t.surface);
  return out;
}

bool Scene::contains(int token) const {
  return std::binary_search(tokens.begin(), tokens.end(), token);
}

bool SceneCover::is_assigned(int token) const {
  return !std::binary_search(unassigned.begin(), unassigned.end(), token);
}

bool SceneGraph::has_edge(int s, int t) const {
  const auto& adj = adjacency.at(s);
  return std::binary_search(adj.begin(), adj.end(), t);
}

int UdGraph::root() const {
  for (int i = 0; i < length(); ++i)
    if (heads[i] == kRoot) return i;
  return kRoot;
}

void validate(const UccaGraph& g) {
  std::unordered_map<NodeId, std::size_t> index;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (!index.emplace(g.nodes[i], i).second)
      throw StructuralError("node declared twice: " + g.nodes[i]);
  }
  if (!index.count(g.root)) throw StructuralError("root is not a declared node");

  std::vector<char> is_terminal(g.nodes.size(), 0);
  for (int i = 0; i < g.length(); ++i) {
    const auto& t = g.terminals[i];
    if (t.token != i) throw StructuralError("terminals do not cover tokens 0..L-1 exactly once");
    auto it = index.find(t.node);
    if (it == index.end()) throw StructuralError("terminal node not declared: " + t.node);
    is_terminal[it->second] = 1;
  }

  std::vector<std::vector<std::size_t>> primary(g.nodes.size()), any(g.nodes.size());
  for (const auto& e : g.edges) {
    auto p = index.find(e.parent);
    auto c = index.find(e.child);
    if (p == index.end() || c == index.end())
      throw StructuralError("edge references undeclared node");
    if (is_terminal[p->second])
      throw StructuralError("terminal node " + e.parent + " has children");
    any[p->second].push_back(c->second);
    if (!e.remote) primary[p->second].push_back(c->second);
  }

  // Cycle check over primary edges: 0 = new, 1 = on stack, 2 = done.
  std::vector<char> state(g.nodes.size(), 0);
  for (std::size_t start = 0; start < g.nodes.size(); ++start) {
    if (state[start]) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{start, 0}};
    state[start] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < primary[node].size()) {
        std::size_t child = primary[node][next++];
        if (state[child] == 1) throw StructuralError("cycle through node " + g.nodes[child]);
        if (state[child] == 0) {
          state[child] = 1;
          stack.push_back({child, 0});
        }
      } else {
        state[node] = 2;
        stack.pop_back();
      }
    }
  }

  std::vector<char> seen(g.nodes.size(), 0);
  std::vector<std::size_t> todo{index.at(g.root)};
  seen[todo.front()] = 1;
  while (!todo.empty()) {
    std::size_t n = todo.back();
    todo.pop_back();
    for (std::size_t c : any[n]) {
      if (!seen[c]) {
        seen[c] = 1;
        todo.push_back(c);
      }
    }
  }
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (!seen[i]) throw StructuralError("node " + g.nodes[i] + " is unreachable from the root");
}

UccaGraph parse_ucca(std::string_view text) {
  auto graphs = parse_ucca_document(text);
  if (graphs.size() != 1)
    throw ParseError("expected exactly one graph, found " + std::to_string(graphs.size()), 0);
  return std::move(graphs.front());
}

std::vector<UccaGraph> parse_ucca_document(std::string_view text) {
  std::vector<UccaGraph> out;
  for (const auto& chunk : chunk_by_header(number_lines(text)))
    out.push_back(parse_ucca_chunk(chunk));
  return out;
}

std::string serialize_ucca(const UccaGraph& g) {
  std::ostringstream os;
  os << "#L " << g.length() << '\n';
  for (const auto& t : g.terminals) os << "T " << t.node << ' ' << t.token << ' ' << t.surface << '\n';
  for (const auto& e : g.edges) {
    os << "E " << e.parent << ' ' << e.child << ' ' << e.category;
    if (e.remote) os << " R";
    os << '\n';
  }
  os << "ROOT " << g.root << '\n';
  return os.str();
}

SceneCover extract_scenes(const UccaGraph& g) {
  std::unordered_map<NodeId, std::vector<const UccaEdge*>> children;
  for (const auto& e : g.edges) children[e.parent].push_back(&e);
  std::unordered_map<NodeId, int> terminal_token;
  for (const auto& t : g.terminals) terminal_token[t.node] = t.token;

  // Terminals reachable from a node, following remote edges too.
  auto reachable_tokens = [&](const NodeId& from) {
    std::vector<int> tokens;
    std::set<NodeId> seen{from};
    std::vector<NodeId> todo{from};
    while (!todo.empty()) {
      NodeId n = std::move(todo.back());
      todo.pop_back();
      if (auto t = terminal_token.find(n); t != terminal_token.end()) tokens.push_back(t->second);
      if (auto c = children.find(n); c != children.end()) {
        for (const UccaEdge* e : c->second)
          if (seen.insert(e->child).second) todo.push_back(e->child);
      }
    }
    sort_unique(tokens);
    return tokens;
  };

  std::vector<Scene> scenes;
  for (const auto& node : g.nodes) {
    auto c = children.find(node);
    if (c == children.end()) continue;
    const UccaEdge* main = nullptr;
    for (const UccaEdge* e : c->second) {
      if (e->category != "P" && e->category != "S") continue;
      if (main) throw StructuralError("node " + node + " has more than one main relation");
      main = e;
    }
    if (!main) continue;
    Scene s;
    s.kind = main->category == "P" ? RelationKind::Process : RelationKind::State;
    s.tokens = reachable_tokens(node);
    s.main_relation = reachable_tokens(main->child);
    for (const UccaEdge* e : c->second)
      if (e->category == "A") s.participants.push_back(reachable_tokens(e->child));
    scenes.push_back(std::move(s));
  }
  return make_cover(g.length(), std::move(scenes));
}

SceneCover make_cover(int length, std::vector<Scene> scenes) {
  if (length < 1) throw StructuralError("sentence length must be positive");
  auto in_range = [&](const std::vector<int>& xs) {
    return std::all_of(xs.begin(), xs.end(), [&](int t) { return t >= 0 && t < length; });
  };
  std::vector<char> covered(length, 0);
  for (auto& s : scenes) {
    sort_unique(s.tokens);
    sort_unique(s.main_relation);
    for (auto& p : s.participants) sort_unique(p);
    if (s.tokens.empty()) throw StructuralError("scene with no tokens");
    if (s.main_relation.empty()) throw StructuralError("scene with empty main relation");
    if (!in_range(s.tokens)) throw StructuralError("scene token out of range");
    if (!is_subset(s.main_relation, s.tokens))
      throw StructuralError("main relation is not inside its scene");
    for (const auto& p : s.participants)
      if (!is_subset(p, s.tokens)) throw StructuralError("participant is not inside its scene");
    for (int t : s.tokens) covered[t] = 1;
  }
  std::stable_sort(scenes.begin(), scenes.end(), [](const Scene& a, const Scene& b) {
    if (a.tokens != b.tokens) return a.tokens < b.tokens;
    return a.main_relation < b.main_relation;
  });
  SceneCover cover;
  cover.length = length;
  for (std::size_t i = 0; i < scenes.size(); ++i) scenes[i].id = static_cast<int>(i);
  cover.scenes = std::move(scenes);
  for (int t = 0; t < length; ++t)
    if (!covered[t]) cover.unassigned.push_back(t);
  return cover;
}

SceneCover parse_scene_cover(std::string_view text) {
  auto covers = parse_scene_cover_document(text);
  if (covers.size() != 1)
    throw ParseError("expected exactly one scene cover, found " + std::to_string(covers.size()), 0);
  return std::move(covers.front());
}

std::vector<SceneCover> parse_scene_cover_document(std::string_view text) {
  std::vector<SceneCover> out;
  for (const auto& chunk : chunk_by_header(number_lines(text)))
    out.push_back(parse_cover_chunk(chunk));
  return out;
}

std::string serialize_scene_cover(const SceneCover& cover) {
  std::ostringstream os;
  os << "#L " << cover.length << '\n';
  for (const auto& s : cover.scenes) {
    os << "S " << (s.kind == RelationKind::Process ? 'P' : 'S') << " main=";
    const auto& m = s.main_relation;
    bool contiguous = m.back() - m.front() + 1 == static_cast<int>(m.size());
    if (m.size() == 1) {
      os << m.front();
    } else if (contiguous) {
      os << m.front() << '-' << m.back();
    } else {
      os << join_ints(m);
    }
    os << " tokens=" << join_ints(s.tokens) << '\n';
  }
  return os.str();
}

SceneGraph build_scene_graph(const SceneCover& cover) {
  const int k = static_cast<int>(cover.scenes.size());
  SceneGraph sg;
  sg.adjacency.resize(k);
  for (int s = 0; s < k; ++s) {
    for (int t = s + 1; t < k; ++t) {
      const auto& a = cover.scenes[s].tokens;
      const auto& b = cover.scenes[t].tokens;
      std::vector<int> common;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
      if (!common.empty()) {
        sg.adjacency[s].push_back(t);
        sg.adjacency[t].push_back(s);
      }
    }
  }
  for (auto& adj : sg.adjacency) std::sort(adj.begin(), adj.end());
  return sg;
}

DistanceMatrix scene_distance(const SceneCover& cover) {
  const int n = cover.length;
  const int k = static_cast<int>(cover.scenes.size());
  const SceneGraph sg = build_scene_graph(cover);

  DistanceMatrix hops(k);
  for (int s = 0; s < k; ++s) {
    std::deque<int> queue{s};
    hops.set(s, s, 0);
    while (!queue.empty()) {
      int u = queue.front();
      queue.pop_front();
      for (int v : sg.adjacency[u]) {
        if (hops.finite(s, v)) continue;
        hops.set(s, v, hops.at(s, u) + 1);
        queue.push_back(v);
      }
    }
  }

  std::vector<std::vector<int>> scenes_of(n);
  for (const auto& s : cover.scenes)
    for (int t : s.tokens) scenes_of[t].push_back(s.id);

  DistanceMatrix dist(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      int best = DistanceMatrix::kInfinity;
      for (int s : scenes_of[i])
        for (int t : scenes_of[j]) best = std::min(best, hops.at(s, t));
      dist.set(i, j, best);
    }
  }
  return dist;
}

std::vector<std::vector<std::string>> sem_split(const std::vector<std::string>& tokens,
                                                const SceneCover& cover) {
  if (static_cast<int>(tokens.size()) != cover.length)
    throw DimensionError("sem_split: " + std::to_string(tokens.size()) +
                         " tokens for a cover of length " + std::to_string(cover.length));
  if (cover.scenes.size() <= 1) return {tokens};
  std::vector<std::vector<std::string>> out;
  for (const auto& s : cover.scenes) {
    std::vector<std::string> part;
    for (int t : s.tokens) part.push_back(tokens[t]);
    out.push_back(std::move(part));
  }
  return out;
}

std::vector<UdGraph> parse_conllu(std::string_view text) {
  std::vector<UdGraph> out;
  std::vector<std::pair<long long, std::size_t>> raw_heads;  // value, line
  UdGraph current;
  std::size_t block_start = 0;

  auto finish = [&]() {
    if (current.forms.empty()) return;
    const int n = static_cast<int>(current.forms.size());
    int roots = 0;
    for (const auto& [h, line] : raw_heads) {
      if (h < 0 || h > n) throw ParseError("head index " + std::to_string(h) + " out of range", line);
      if (h == 0) ++roots;
      current.heads.push_back(h == 0 ? UdGraph::kRoot : static_cast<int>(h - 1));
    }
    if (roots != 1)
      throw StructuralError("sentence at line " + std::to_string(block_start) + " has " +
                            std::to_string(roots) + " roots");
    // Every token must reach the root by following heads.
    for (int i = 0; i < n; ++i) {
      int steps = 0;
      for (int v = i; v != UdGraph::kRoot; v = current.heads[v]) {
        if (++steps > n)
          throw StructuralError("dependency cycle in sentence at line " + std::to_string(block_start));
      }
    }
    out.push_back(std::move(current));
    current = UdGraph{};
    raw_heads.clear();
  };

  std::size_t number = 0;
  for (auto line : split_lines(text)) {
    ++number;
    if (is_blank(line)) {
      finish();
      continue;
    }
    if (line.front() == '#') continue;
    auto cols = split_on(line, '\t');
    if (cols.size() != 10) throw ParseError("expected 10 tab-separated columns", number);
    if (cols[0].find_first_of("-.") != std::string_view::npos) continue;
    auto id = parse_int(cols[0]);
    if (!id) throw ParseError("bad token id \"" + std::string(cols[0]) + "\"", number);
    if (current.forms.empty()) block_start = number;
    if (*id != static_cast<long long>(current.forms.size()) + 1)
      throw ParseError("token ids must run 1..n", number);
    auto head = parse_int(cols[6]);
    if (!head) throw ParseError("bad head \"" + std::string(cols[6]) + "\"", number);
    current.forms.emplace_back(cols[1]);
    current.deprels.emplace_back(cols[7]);
    raw_heads.push_back({*head, number});
  }
  finish();
  return out;
}

std::string serialize_conllu(const std::vector<UdGraph>& sentences) {
  std::ostringstream os;
  for (const auto& s : sentences) {
    for (int i = 0; i < s.length(); ++i) {
      int head = s.heads[i] == UdGraph::kRoot ? 0 : s.heads[i] + 1;
      os << i + 1 << '\t' << s.forms[i] << "\t_\t_\t_\t_\t" << head << '\t' << s.deprels[i]
         << "\t_\t_\n";
    }
    os << '\n';
  }
  return os.str();
}

DistanceMatrix ud_distance(const UdGraph& ud) {
  const int n = ud.length();
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < n; ++i) {
    if (ud.heads[i] == UdGraph::kRoot) continue;
    adj[i].push_back(ud.heads[i]);
    adj[ud.heads[i]].push_back(i);
  }
  DistanceMatrix dist(n);
  for (int s = 0; s < n; ++s) {
    std::deque<int> queue{s};
    dist.set(s, s, 0);
    while (!queue.empty()) {
      int u = queue.front();
      queue.pop_front();
      for (int v : adj[u]) {
        if (dist.finite(s, v)) continue;
        dist.set(s, v, dist.at(s, u) + 1);
        queue.push_back(v);
      }
    }
  }
  return dist;
}

}  // namespace semtx
