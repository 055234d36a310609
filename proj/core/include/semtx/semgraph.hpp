#pragma once

// UCCA and Universal Dependencies ingestion, scene extraction, scene-graph
// distances and scene-based sentence splitting.

#include <limits>
#include <string>
#include <string_view>
#include <vector>

namespace semtx {

using NodeId = std::string;

struct UccaEdge {
  NodeId parent;
  NodeId child;
  std::string category;
  bool remote = false;

  bool operator==(const UccaEdge&) const = default;
};

struct UccaTerminal {
  NodeId node;
  int token = 0;
  std::string surface;

  bool operator==(const UccaTerminal&) const = default;
};

// Rooted DAG over semantic units. Terminals are sorted by token index and
// token i is always terminals[i].
struct UccaGraph {
  std::vector<NodeId> nodes;  // declaration order, unique
  std::vector<UccaEdge> edges;
  std::vector<UccaTerminal> terminals;
  NodeId root;

  int length() const { return static_cast<int>(terminals.size()); }
  std::vector<std::string> tokens() const;
};

enum class RelationKind { Process, State };

struct Scene {
  int id = 0;
  std::vector<int> tokens;  // sorted, unique
  RelationKind kind = RelationKind::Process;
  std::vector<int> main_relation;  // sorted subset of tokens
  std::vector<std::vector<int>> participants;

  bool contains(int token) const;
};

struct SceneCover {
  int length = 0;
  std::vector<Scene> scenes;
  std::vector<int> unassigned;  // sorted

  bool is_assigned(int token) const;
};

// Undirected scene adjacency: scenes are linked when their token sets meet.
struct SceneGraph {
  std::vector<std::vector<int>> adjacency;  // sorted neighbour lists

  int size() const { return static_cast<int>(adjacency.size()); }
  bool has_edge(int s, int t) const;
};

// Dependency tree of one sentence. heads[i] is the 0-based parent of token i
// or kRoot.
struct UdGraph {
  static constexpr int kRoot = -1;

  std::vector<std::string> forms;
  std::vector<int> heads;
  std::vector<std::string> deprels;

  int length() const { return static_cast<int>(heads.size()); }
  int root() const;
  bool operator==(const UdGraph&) const = default;
};

// Square integer matrix with an explicit unreachable sentinel.
class DistanceMatrix {
 public:
  static constexpr int kInfinity = std::numeric_limits<int>::max();

  DistanceMatrix() = default;
  explicit DistanceMatrix(int n, int fill = kInfinity)
      : n_(n), values_(static_cast<std::size_t>(n) * n, fill) {}

  int size() const { return n_; }
  int at(int i, int j) const { return values_[index(i, j)]; }
  void set(int i, int j, int v) { values_[index(i, j)] = v; }
  bool finite(int i, int j) const { return at(i, j) != kInfinity; }

  bool operator==(const DistanceMatrix&) const = default;

 private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * n_ + j;
  }
  int n_ = 0;
  std::vector<int> values_;
};

// --- UCCA graph files -------------------------------------------------------

// Parses exactly one graph. Throws ParseError (with line) on malformed
// records and StructuralError on invariant violations.
UccaGraph parse_ucca(std::string_view text);

// Parses a file holding any number of graphs, each starting at its own "#L"
// header.
std::vector<UccaGraph> parse_ucca_document(std::string_view text);

std::string serialize_ucca(const UccaGraph& g);

// Re-checks every UccaGraph invariant.
void validate(const UccaGraph& g);

// --- Scenes ------------------------------------------------------------------

// One scene per node with an outgoing P or S edge. Token sets follow remote
// edges, so a shared participant lands in several scenes.
SceneCover extract_scenes(const UccaGraph& g);

// Scene-cover shortcut files ("#L n" + "S <P|S> main=i-j tokens=a,b,c").
SceneCover parse_scene_cover(std::string_view text);
std::vector<SceneCover> parse_scene_cover_document(std::string_view text);
std::string serialize_scene_cover(const SceneCover& cover);

// Fills ids and unassigned, sorts token sets and checks the invariants.
SceneCover make_cover(int length, std::vector<Scene> scenes);

SceneGraph build_scene_graph(const SceneCover& cover);

// Token distance through the scene graph: 0 when some scene holds both
// tokens, otherwise the fewest scene hops; kInfinity when disconnected or
// when either token is unassigned.
DistanceMatrix scene_distance(const SceneCover& cover);

// Splits a sentence into one sub-sentence per scene (unassigned tokens are
// dropped). Zero or one scene returns the input unchanged.
std::vector<std::vector<std::string>> sem_split(
    const std::vector<std::string>& tokens, const SceneCover& cover);

// --- CoNLL-U -------------------------------------------------------------------

std::vector<UdGraph> parse_conllu(std::string_view text);
std::string serialize_conllu(const std::vector<UdGraph>& sentences);

// Undirected tree distance between every pair of tokens, by BFS.
DistanceMatrix ud_distance(const UdGraph& ud);

}  // namespace semtx
