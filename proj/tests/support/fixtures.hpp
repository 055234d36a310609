#pragma once

#include <string_view>

namespace semtx::testing {

// "I saw the dog that barked ." Two scenes: {I saw the dog} with Process
// "saw" and {dog barked} with Process "barked"; "dog" reaches the second
// scene through a remote Participant edge. "that" and "." hang off the root.
inline constexpr std::string_view kBarkedGraph = R"(#L 7
T t0 0 I
T t1 1 saw
T t2 2 the
T t3 3 dog
T t4 4 that
T t5 5 barked
T t6 6 .
E root s1 H
E root s2 H
E root t4 L
E root t6 U
E s1 t0 A
E s1 t1 P
E s1 d A
E d t2 E
E d t3 C
E s2 t3 A R
E s2 t5 P
ROOT root
)";

inline constexpr int kI = 0, kSaw = 1, kThe = 2, kDog = 3, kThat = 4, kBarked = 5, kPeriod = 6;

// Three scenes in a chain: {0,1,2} / {2,3,4} / {4,5,6}, token 7 unassigned.
inline constexpr std::string_view kChainGraph = R"(#L 8
T a 0 w0
T b 1 w1
T c 2 w2
T d 3 w3
T e 4 w4
T f 5 w5
T g 6 w6
T h 7 w7
E root s1 H
E root s2 H
E root s3 H
E root h U
E s1 a A
E s1 b P
E s1 c A
E s2 c A R
E s2 d S
E s2 e A
E s3 e A R
E s3 f P
E s3 g A
ROOT root
)";

}  // namespace semtx::testing
